import json

import pytest

from chaincert.cli import synth_epsilon
from chaincert.errors import DimensionError, InputError
from chaincert.formats import dumps_json
from chaincert.pipeline import ExtractionProtocol, all_verdicts_true, analyse_chain, emit_report
from chaincert.synth import SynthChainSpec, gen_power_law_chain, null_chain


@pytest.fixture(scope="module")
def chain_and_proto():
    layers = gen_power_law_chain(SynthChainSpec(d=8, L=3, alphas=1.0, seed=7, frames="permutation"))
    proto = ExtractionProtocol(eps=float(f"{synth_epsilon(layers):.3g}"), theta=1e-9, sizes=1)
    return layers, proto


def test_protocol_validation():
    with pytest.raises(InputError):
        ExtractionProtocol(sizes=None)
    with pytest.raises(InputError):
        ExtractionProtocol(eps=1.5)
    with pytest.raises(InputError):
        ExtractionProtocol.from_dict({"bogus": 1})


def test_threaded_analysis_matches_serial(chain_and_proto):
    layers, proto = chain_and_proto
    a = emit_report(analyse_chain(layers, proto))
    b = emit_report(analyse_chain(layers, proto, threads=3))
    assert dumps_json(a) == dumps_json(b)
    assert all_verdicts_true(a)


def test_report_round_trip(chain_and_proto):
    layers, proto = chain_and_proto
    text = dumps_json(emit_report(analyse_chain(layers, proto)))
    assert dumps_json(json.loads(text)) == text


def test_unaligned_chain_is_incomplete(chain_and_proto):
    layers, proto = chain_and_proto
    report = emit_report(analyse_chain(layers, proto, align=False))
    assert not report["complete"] and not all_verdicts_true(report)


def test_partition_row_mismatch(chain_and_proto):
    layers, proto = chain_and_proto
    bad = ExtractionProtocol(eps=proto.eps, theta=1e-9, sizes=1, row_labels=(0, 1))
    with pytest.raises(DimensionError):
        analyse_chain(layers, bad)


def test_gaussian_baseline_is_recorded(chain_and_proto, rng):
    layers, proto = chain_and_proto
    base = analyse_chain(null_chain(layers, "gaussian", rng), proto)
    report = emit_report(analyse_chain(layers, proto), {"gaussian": base})
    assert isinstance(report["baselines"]["gaussian"]["physical"], bool)
