import streamlit as st
import export_utils
import profile_utils
import scenario_utils
import settings_utils
import json
import os
import numpy as np
from errors import ClawError
from control_utils import ControlSignal

# --- Page Config ---
st.set_page_config(page_title="Balance-Law Steering Lab", layout="wide", page_icon="🌊")

# --- Session State Init ---
DEFAULTS = {
    "settings": None,
    "scenario_name": None,
    "scenario_text": None,
    "last_result": None,
    "pdf_data": None,
    "latex_data": None,
    "latex_code": None,
    "export_formats": ["JSON", "PDF", "LaTeX"],
    "profile_name": "Default",
}

for k, v in DEFAULTS.items():
    if k not in st.session_state:
        st.session_state[k] = v

if st.session_state.settings is None:
    st.session_state.settings = settings_utils.load_settings()
    settings_utils.configure_logging(st.session_state.settings)
settings = st.session_state.settings


def list_scenarios(directory):
    if not os.path.isdir(directory):
        return []
    return sorted(f for f in os.listdir(directory) if f.endswith(".json"))


def current_scenario():
    """Parses the scenario text held in the session; shows the error and returns None when it does not validate."""
    text = st.session_state.scenario_text
    if not text:
        st.info("Pick or upload a scenario in the sidebar.")
        return None
    try:
        data = json.loads(text)
        return scenario_utils.parse_scenario(data, settings["scenarios_dir"], settings,
                                             source=st.session_state.scenario_name)
    except json.JSONDecodeError as e:
        st.error(f"❌ Invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}")
    except ClawError as e:
        st.error(f"❌ {e}")
    return None


def update_exports():
    """Regenerates export files from the last run report."""
    result = st.session_state.last_result
    if not result:
        return
    formats = st.session_state.export_formats
    if "PDF" in formats:
        st.session_state.pdf_data = export_utils.create_pdf(result["report"])
    if "LaTeX" in formats:
        data, code = export_utils.create_latex(result["report"])
        st.session_state.latex_data = data
        st.session_state.latex_code = code


def show_result(result, key):
    if result["ok"]:
        st.success(f"✅ {result['report']['command']} finished (exit {result['exit_code']})")
    else:
        st.error(f"Failed [exit {result['exit_code']}]: {result['error']}")
    report = result["report"]
    rows = export_utils.bound_rows(report)
    if rows:
        st.markdown("### Bounds")
        st.table({"bound": [r[0] for r in rows], "claimed": [r[1] for r in rows],
                  "measured": [r[2] for r in rows], "check": [r[3] for r in rows]})
    with st.expander("📋 Full report (JSON)"):
        st.code(export_utils.dumps(report), language="json")
    if result["files"]:
        st.caption("Written: " + ", ".join(result["files"].values()))

    dl_cols = st.columns(3)
    formats = st.session_state.export_formats
    if "JSON" in formats:
        dl_cols[0].download_button(
            label="Download .json",
            data=export_utils.dumps(report),
            file_name=f"{report.get('scenario', 'run')}_{report.get('command')}.json",
            mime="application/json",
            icon="🧾",
            key=f"{key}_json",
        )
    if "PDF" in formats and st.session_state.pdf_data:
        dl_cols[1].download_button(
            label="Download .pdf",
            data=st.session_state.pdf_data,
            file_name=f"{report.get('scenario', 'run')}_report.pdf",
            mime="application/pdf",
            icon="📑",
            key=f"{key}_pdf",
        )
    if "LaTeX" in formats and st.session_state.latex_data:
        dl_cols[2].download_button(
            label="Download .tex",
            data=st.session_state.latex_data,
            file_name=f"{report.get('scenario', 'run')}_bounds.tex",
            mime="application/x-tex",
            icon="📜",
            key=f"{key}_tex",
        )


def run_command(fn, *args, **kwargs):
    with st.spinner("Running..."):
        result = fn(*args, **kwargs)
    st.session_state.last_result = result
    update_exports()
    return result

# --- Sidebar ---
with st.sidebar:
    st.title("🧩 Scenario")

    scenario_files = list_scenarios(settings["scenarios_dir"])
    if scenario_files:
        selected_idx = 0
        if st.session_state.scenario_name in scenario_files:
            selected_idx = scenario_files.index(st.session_state.scenario_name)
        selection = st.selectbox("📂 Stored scenarios", scenario_files, index=selected_idx)
        if selection != st.session_state.scenario_name:
            with open(os.path.join(settings["scenarios_dir"], selection), "r") as f:
                st.session_state.scenario_text = f.read()
            st.session_state.scenario_name = selection
            st.session_state.last_result = None
            st.rerun()
    else:
        st.warning(f"No scenarios in '{settings['scenarios_dir']}'")

    uploaded = st.file_uploader("Or upload a scenario", type="json")
    if uploaded is not None and uploaded.name != st.session_state.scenario_name:
        st.session_state.scenario_text = uploaded.getvalue().decode("utf-8")
        st.session_state.scenario_name = uploaded.name
        st.session_state.last_result = None
        st.rerun()

    st.divider()
    st.session_state.export_formats = st.multiselect("Export formats", ["JSON", "PDF", "LaTeX"],
                                                     default=st.session_state.export_formats)
    if st.button("🔄 Reset Session"):
        st.session_state.clear()
        st.rerun()

# --- Main Layout ---
st.title("Balance-Law Steering Lab")
tab_metrics, tab_steer, tab_bv, tab_profiles, tab_settings = st.tabs(
    ["📐 Metrics", "🎯 Steer", "🧱 BV pipeline", "👤 Profiles", "⚙️ Settings"])

# ==========================
# TAB: METRICS
# ==========================
with tab_metrics:
    st.header("📐 Bracket norms and controllability times")
    if st.session_state.scenario_text:
        st.text_area("Scenario JSON (edit to try variants)", key="scenario_text", height=260)
    scn = current_scenario()
    if scn is not None and st.button("Compute metrics", type="primary"):
        result = run_command(scenario_utils.cmd_metrics, scn, None, settings)
        report = result["report"]
        if result["ok"]:
            cols = st.columns(max(len(report["intervals"]), 1))
            for col, entry in zip(cols, report["intervals"]):
                col.metric(f"[|f|] on {entry['interval']}", entry["value"], f"k = {entry['k_witness']}")
            for pair in report["pairs"]:
                st.write(f"**T\\*** for intervals {pair['intervals']}: {pair['T_star']}")
            st.write(f"**sup |f''|** = {report['f2_sup']['value']:.6g} (flux class: {report['flux_class']})")
        show_result(result, "metrics")

# ==========================
# TAB: STEER
# ==========================
with tab_steer:
    st.header("🎯 Synthesize, solve, verify")
    scn = current_scenario()
    if scn is not None:
        col_1, col_2 = st.columns([1, 2])
        with col_1:
            strategy = st.radio("Strategy", scenario_utils.STRATEGIES,
                                index=scenario_utils.STRATEGIES.index(scn.strategy))
            force = st.checkbox("Run even when the hypotheses fail")
            dx = st.number_input("Classical dx", value=float(scn.dx), min_value=1e-5, format="%.5f")
            go = st.button("Steer", type="primary")
        with col_2:
            if go:
                scn.dx = dx
                result = run_command(scenario_utils.cmd_steer, scn, None, settings, force, strategy)
                control = result["files"].get("control")
                if control:
                    with open(control, "r") as f:
                        signal = ControlSignal.from_dict(json.load(f)["signal"])
                    ts = np.linspace(signal.start, signal.end, 801)
                    st.markdown("### Control h(t)")
                    st.line_chart({"t": ts, "h": signal(ts)}, x="t", y="h")
                times = result["report"].get("times") or {}
                if times:
                    st.write(", ".join(f"**{k}** = {export_utils.format_value(v)}" for k, v in sorted(times.items())))
                show_result(result, "steer")

# ==========================
# TAB: BV PIPELINE
# ==========================
with tab_bv:
    st.header("🧱 Mollify, synthesize, solve")
    scn = current_scenario()
    if scn is not None:
        n_text = st.text_input("Mollification indices", ", ".join(str(n) for n in scn.bv_n))
        if st.button("Run pipeline", type="primary"):
            try:
                n_sequence = [int(v) for v in n_text.split(",") if v.strip()]
            except ValueError:
                st.error("❌ Indices must be integers.")
                n_sequence = None
            if n_sequence:
                result = run_command(scenario_utils.cmd_bv_pipeline, scn, n_sequence, None, settings)
                rows = result["report"].get("sequence", [])
                if rows:
                    st.markdown("### Terminal L1 error vs mollification gap")
                    st.line_chart({"n": [r["n"] for r in rows],
                                   "terminal L1": [r["terminal_l1"] for r in rows],
                                   "mollification L1": [r["mollification_l1_target"] for r in rows]}, x="n")
                show_result(result, "bv")

# ==========================
# TAB: PROFILES
# ==========================
with tab_profiles:
    st.header("👤 Stored profiles")
    profile_list = profile_utils.list_profiles(settings["profiles_dir"])
    col_p1, col_p2 = st.columns(2)
    with col_p1:
        if profile_list:
            selected_idx = 0
            if st.session_state.profile_name in profile_list:
                selected_idx = profile_list.index(st.session_state.profile_name)
            name = st.selectbox("Profile", profile_list, index=selected_idx)
            st.session_state.profile_name = name
            prof = profile_utils.load_profile(name, settings["profiles_dir"])
            if prof is None:
                st.error("Failed to load profile.")
            else:
                xs = np.linspace(prof.a, prof.b, 401)
                st.line_chart({"x": xs, "u": prof.value(xs)}, x="x", y="u")
                tv, _, _, sup = profile_utils.variation_report(prof)
                st.write(f"TV = {tv:.6g}, sup = {sup:.6g}, D+ = {prof.d_plus:.6g}, D- = {prof.d_minus:.6g}")
        else:
            st.info("No stored profiles yet.")
    with col_p2:
        scn = current_scenario() if st.session_state.scenario_text else None
        if scn is not None:
            st.subheader("Save from scenario")
            role = st.radio("State", ["ubar", "psi"], horizontal=True)
            new_name = st.text_input("Profile name", f"{scn.name}_{role}")
            if st.button("Save profile"):
                prof = getattr(scn, role)
                if prof is None:
                    st.error(f"Scenario has no '{role}'.")
                elif profile_utils.save_profile(new_name, prof, settings["profiles_dir"]):
                    st.success("Saved!")
                    st.rerun()
                else:
                    st.error("Failed to save.")

# ==========================
# TAB: SETTINGS
# ==========================
with tab_settings:
    st.header("⚙️ Configuration")
    sources = settings.get("sources", {})
    edited = {}
    for key, default in settings_utils.DEFAULTS.items():
        label = f"{key} ({sources.get(key, 'default')})"
        disabled = sources.get(key) == "env"
        if isinstance(default, float):
            edited[key] = st.number_input(label, value=float(settings[key]), format="%.6g", disabled=disabled)
        else:
            edited[key] = st.text_input(label, value=str(settings[key]), disabled=disabled)
    st.caption(f"Environment variables ({settings_utils.ENV_PREFIX}*) override the settings file.")
    if st.button("💾 Save Settings"):
        merged = dict(settings)
        merged.update(edited)
        if settings_utils.save_settings(merged):
            st.session_state.settings = settings_utils.load_settings()
            st.success("Saved!")
            st.rerun()
        else:
            st.error("Failed to save.")
