import numpy as np
import pytest

from fedcast import forecaster, signals
from fedcast.federation import ClientState
from fedcast.forecaster import ModelConfig, PretrainedCheckpoint, loss_and_grad
from fedcast.signals import Modality, Morphology
from fedcast.tokenizer import TokenizerConfig

# small enough that a full federated run takes well under a second
TINY = ModelConfig(n_bins=16, embed_dim=3, hidden_dim=6, receptive=6)
TINY_TOK = TokenizerConfig(n_bins=16)
L_CTX, L_HOR = 12, 4


def tiny_windows(seed, n_samples=200, modality=Modality.ECG, rate=1.2, stride=4):
    s = signals.generate_synthetic(modality, seed, n_samples, Morphology(beat_rate_hz=rate),
                                   subject_id=f"{modality.value}-{seed}")
    return signals.make_windows(s, L_CTX, L_HOR, stride)


def tiny_client(cid, seed=None, n_train=10, n_test=4, steps=3, batch=4, modality=Modality.ECG):
    ws = tiny_windows(cid if seed is None else seed, modality=modality)
    return ClientState(cid, ws[:n_train], ws[n_train:n_train + n_test], steps, batch, modality)


def tiny_checkpoint(seed=0):
    return PretrainedCheckpoint(forecaster.init_params(TINY, seed), "test", seed)


def random_batch(rng, n_windows=3, l_ctx=L_CTX, l_hor=L_HOR):
    out = []
    for k in range(n_windows):
        x = rng.normal(size=l_ctx + l_hor).cumsum() * 0.1 + 0.5
        out.append(signals.Window(x[:l_ctx], x[l_ctx:], Modality.ECG, f"r{k}", 0))
    return out


def fd_check_coords(params, batch, tok, cfg, coords, h=1e-5):
    """Largest relative error between analytic and central-difference gradient."""
    _, grad = loss_and_grad(params, batch, tok, cfg)
    worst = 0.0
    for j in coords:
        plus, minus = params.values.copy(), params.values.copy()
        plus[j] += h
        minus[j] -= h
        lp = loss_and_grad(params.with_values(plus), batch, tok, cfg)[0]
        lm = loss_and_grad(params.with_values(minus), batch, tok, cfg)[0]
        num = (lp - lm) / (2 * h)
        ana = grad.values[j]
        # floor keeps coordinates with an exactly zero gradient from dividing by noise
        worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-8))
    return worst


@pytest.fixture
def clients():
    return [tiny_client(i) for i in range(3)]


@pytest.fixture
def checkpoint():
    return tiny_checkpoint()


@pytest.fixture(scope="session")
def pretrained(tmp_path_factory):
    """Default-size checkpoint exactly as the harness builds it, pretrained once per session."""
    from fedcast import harness
    from fedcast.config import ExperimentConfig
    return harness.get_checkpoint(ExperimentConfig(), tmp_path_factory.mktemp("pretrained"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------------------
# acceptance summary: one line per criterion at the end of the run

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    n, title = marker.args
    entry = _criteria.setdefault(n, {"title": title, "ok": True, "details": [], "seconds": 0.0})
    entry["ok"] &= rep.passed
    entry["seconds"] += rep.duration
    entry["details"] += [str(v) for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        e = _criteria[n]
        status = "PASS" if e["ok"] else "FAIL"
        detail = f" [{'; '.join(e['details'])}]" if e["details"] else ""
        terminalreporter.write_line(
            f"criterion {n}: {status}  {e['title']} ({e['seconds']:.1f}s){detail}")
