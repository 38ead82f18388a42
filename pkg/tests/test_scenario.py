"""Config parsing, rendering, validation and scenario assembly."""

import pytest

from cohsim.fabric import SystemConfig
from cohsim.scenario import (
    ConfigParseError,
    MonitorConfig,
    build_scenario,
    builtin_config_names,
    node_from_token,
    parse_config,
    read_builtin_config,
    render_config,
    resolve_config_text,
)
from cohsim.trojan import (
    Diverting,
    Forging,
    Masquerading,
    Modifying,
    PassiveReading,
    TriggerKind,
)
from cohsim.protocol import core, mc

MINIMAL = "format=1\n[system]\n"

ALL_DEMOS = [
    "diverting_demo.cfg",
    "forging_demo.cfg",
    "forging_full_scale.cfg",
    "masquerading_deadlock_demo.cfg",
    "masquerading_demo.cfg",
    "modifying_demo.cfg",
    "modifying_fwd_demo.cfg",
    "passive_demo.cfg",
    "random_soak.cfg",
    "victim_demo.cfg",
]


def issue_pairs(err: ConfigParseError) -> set[tuple[int, str]]:
    return {(i.line, i.field) for i in err.issues}


# --- parsing ------------------------------------------------------------------

def test_minimal_config_gets_all_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.system == SystemConfig()
    assert cfg.workloads == ()
    assert cfg.attack is None
    assert cfg.monitor == MonitorConfig(enabled=True, cpu_visibility=True)
    assert cfg.trace_path is None


def test_comments_and_blank_lines_are_ignored():
    text = "# demo\nformat=1\n\n[system]\n# inline note\nnum_mcs=4\n"
    assert parse_config(text).system.num_mcs == 4


def test_trace_key_sets_the_trace_path():
    cfg = parse_config("format=1\n[system]\ntrace=/tmp/out.trc\n")
    assert cfg.trace_path == "/tmp/out.trc"


def test_workload_parsing():
    text = (
        "format=1\n[system]\n"
        "[workload.1]\nkind=random\ncore=3\nseed=9\npool=0x0, 0x8\nops=25\n"
        "[workload.0]\nkind=victim_array\ncore=0\nbase=0x40\nn=4\nstart=50\n"
    )
    cfg = parse_config(text)
    # specs come back sorted by index regardless of file order
    assert [w.index for w in cfg.workloads] == [0, 1]
    victim, rand = cfg.workloads
    assert (victim.kind, victim.core, victim.base, victim.n, victim.start) == \
        ("victim_array", 0, 0x40, 4, 50)
    assert (rand.kind, rand.core, rand.seed, rand.pool, rand.ops) == \
        ("random", 3, 9, (0x0, 0x8), 25)


def test_attack_parsing_with_nth_trigger():
    text = (
        "format=1\n[system]\n[attack]\nkind=forging\ncore=7\ntarget=0x0\n"
        "payload=0500000000000000\ntrigger=on_nth:3\noffset=2\n"
    )
    attack = parse_config(text).attack
    assert attack.kind == "forging"
    assert attack.trigger == "on_nth"
    assert attack.trigger_n == 3
    assert attack.offset == 2
    assert attack.payload == bytes([5] + [0] * 7)


def test_monitor_section():
    text = "format=1\n[system]\n[monitor]\nenabled=false\ncpu_visibility=false\n"
    cfg = parse_config(text)
    assert cfg.monitor == MonitorConfig(enabled=False, cpu_visibility=False)


# --- error collection -----------------------------------------------------------

def test_all_problems_are_reported_with_positions():
    text = "\n".join([
        "format=1",            # 1
        "[system]",            # 2
        "num_chiplets=two",    # 3
        "num_mcs=3",           # 4
        "bogus=7",             # 5
        "latency_mc=15",       # 6
        "latency_mc=16",       # 7
        "[workload.0]",        # 8
        "kind=victim_array",   # 9
        "core=0",              # 10
        "base=0x3",            # 11
        "[workload.zzz]",      # 12
        "[attack]",            # 13
        "kind=forging",        # 14
        "core=99",             # 15
        "target=0x0",          # 16
        "payload=zz",          # 17
        "trigger=on_nth:0",    # 18
        "offset=9",            # 19
        "[monitor]",           # 20
        "enabled=maybe",       # 21
        "[weird]",             # 22
        "junk",                # 23
    ]) + "\n"
    with pytest.raises(ConfigParseError) as err:
        parse_config(text)
    pairs = issue_pairs(err.value)
    # typed-value problems point at their section; positional ones at their line
    assert (2, "num_chiplets") in pairs
    assert (2, "num_mcs") in pairs
    assert (5, "bogus") in pairs
    assert (7, "latency_mc") in pairs
    assert (0, "workload.0.base") in pairs
    assert (12, "workload.zzz") in pairs
    assert (0, "attack.core") in pairs
    assert (13, "payload") in pairs
    assert (13, "trigger") in pairs
    assert (0, "offset") in pairs
    assert (0, "payload") in pairs       # empty payload also fails length check
    assert (20, "enabled") in pairs
    assert (22, "weird") in pairs
    assert (23, "syntax") in pairs
    assert str(err.value.issues[0]).startswith("line ")


def test_missing_format_header():
    with pytest.raises(ConfigParseError) as err:
        parse_config("[system]\n")
    assert (1, "format") in issue_pairs(err.value)


def test_missing_system_section():
    with pytest.raises(ConfigParseError) as err:
        parse_config("format=1\n[monitor]\n")
    assert (0, "system") in issue_pairs(err.value)


def test_key_outside_any_section():
    with pytest.raises(ConfigParseError) as err:
        parse_config("format=1\nstray=1\n[system]\n")
    assert (2, "stray") in issue_pairs(err.value)


def test_core_bound_twice_and_out_of_range():
    text = (
        "format=1\n[system]\nnum_chiplets=1\ncores_per_chiplet=2\nnum_mcs=1\n"
        "[workload.0]\nkind=reader\ncore=0\nn=1\n"
        "[workload.1]\nkind=reader\ncore=0\nn=1\n"
        "[workload.2]\nkind=reader\ncore=6\nn=1\n"
    )
    with pytest.raises(ConfigParseError) as err:
        parse_config(text)
    pairs = issue_pairs(err.value)
    assert (0, "workload.1.core") in pairs
    assert (0, "workload.2.core") in pairs


def test_forging_payload_must_fill_a_line():
    text = (
        "format=1\n[system]\n[attack]\nkind=forging\ncore=0\ntarget=0x0\n"
        "payload=05\n"
    )
    with pytest.raises(ConfigParseError) as err:
        parse_config(text)
    issue = [i for i in err.value.issues if i.field == "payload"][0]
    assert "8 bytes" in issue.message


def test_divert_target_must_exist():
    text = (
        "format=1\n[system]\nnum_mcs=2\n[attack]\nkind=diverting\ncore=0\n"
        "divert_to=mc5\n"
    )
    with pytest.raises(ConfigParseError) as err:
        parse_config(text)
    assert (0, "divert_to") in issue_pairs(err.value)


# --- rendering ------------------------------------------------------------------

@pytest.mark.parametrize("name", ALL_DEMOS)
def test_render_round_trips_every_builtin(name):
    cfg = parse_config(read_builtin_config(name))
    assert parse_config(render_config(cfg)) == cfg


def test_render_is_canonical():
    cfg = parse_config(MINIMAL)
    text = render_config(cfg)
    assert text.startswith("format=1\n[system]\n")
    assert text == render_config(parse_config(text))


# --- builtins and resolution ------------------------------------------------------

def test_builtin_names():
    assert builtin_config_names() == ALL_DEMOS


def test_resolve_accepts_bare_names_and_paths(tmp_path):
    assert resolve_config_text("victim_demo") == read_builtin_config("victim_demo.cfg")
    path = tmp_path / "mine.cfg"
    path.write_text(MINIMAL)
    assert resolve_config_text(str(path)) == MINIMAL
    with pytest.raises(FileNotFoundError):
        resolve_config_text("no_such_config")
    with pytest.raises(FileNotFoundError):
        resolve_config_text("somewhere/victim_demo")   # paths are not searched


def test_node_tokens():
    assert node_from_token("core3") == core(3)
    assert node_from_token("mc1") == mc(1)


# --- scenario assembly -------------------------------------------------------------

def test_build_scenario_wires_everything():
    system = build_scenario(parse_config(read_builtin_config("forging_demo.cfg")))
    assert system.cores[0].binding is not None
    assert isinstance(system.cores[7].trojan.kind, Forging)
    assert system.monitor is not None
    assert system.monitor.cpu_visibility


def test_monitor_override_wins():
    cfg = parse_config(read_builtin_config("forging_demo.cfg"))
    assert build_scenario(cfg, monitor_override=False).monitor is None


def test_attack_kind_mapping():
    def attack_for(kind_lines):
        text = "format=1\n[system]\n[attack]\n" + kind_lines
        cfg = parse_config(text)
        system = build_scenario(cfg, monitor_override=False)
        return system.cores[cfg.attack.core].trojan.kind

    assert isinstance(attack_for("kind=passive_reading\ncore=7\n"), PassiveReading)
    masq = attack_for("kind=masquerading\ncore=7\nfake_sender=2\nvariant=request\n")
    assert isinstance(masq, Masquerading)
    assert masq.fake_sender == core(2)
    assert masq.variant == "request"
    assert isinstance(attack_for("kind=modifying\ncore=7\nvariant=forward\n"),
                      Modifying)
    div = attack_for("kind=diverting\ncore=7\ndivert_to=2\n")
    assert isinstance(div, Diverting)
    assert div.divert_to == core(2)
    forging = attack_for(
        "kind=forging\ncore=7\ntarget=0x8\npayload=aa00000000000000\n"
        "trigger=immediate\n"
    )
    assert isinstance(forging, Forging)
    assert forging.trigger.kind is TriggerKind.IMMEDIATE
    assert forging.target == 0x8
