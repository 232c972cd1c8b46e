import numpy as np
import pytest

from daan.losses import global_domain_loss, label_loss, local_domain_loss, objective, total_loss
from daan.net import BoundModel, NetConfig, classify, extract_features, global_domain_logits, init_model, local_domain_logits
from daan.autodiff import take_rows


def small_daan_problem(seed, detach=True, batch=4, max_dim=8, max_width=16, max_classes=4):
    """Random small model + batch and the pieces needed to build every loss.

    Biases are perturbed away from their zero init so every term is generic.
    Returns ``(model, saddle_value, descent_target, omega)``; both callables
    take ``(tape, params)``.
    """
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, max_dim + 1))
    C = int(rng.integers(2, max_classes + 1))
    cfg = NetConfig(
        input_dim=d,
        num_classes=C,
        feature_dim=int(rng.integers(2, max_width + 1)),
        hidden_width=int(rng.integers(2, max_width + 1)),
        discriminator_hidden=int(rng.integers(2, max_width + 1)),
        init_seed=seed,
    )
    model = init_model(cfg)
    for k, v in model.params.items():
        if k.endswith(".b"):
            model.params[k] = rng.normal(scale=0.3, size=v.shape)
    ns = batch // 2
    x = rng.normal(size=(batch, d))
    ys = rng.integers(0, C, ns)
    dom = np.r_[np.zeros(ns, int), np.ones(batch - ns, int)]
    omega = float(rng.uniform())

    # a detached weighting is a constant of the objective: freeze it at the base point
    frozen = classify(model, extract_features(model, x)).values

    def components(p, coeff):
        m = BoundModel(cfg, p)
        f = extract_features(m, x)
        yhat = classify(m, f)
        L_y = label_loss(take_rows(yhat, 0, ns), ys)
        L_g = global_domain_loss(global_domain_logits(m, f, coeff), dom)
        weights = frozen if detach else yhat
        L_l, _ = local_domain_loss(local_domain_logits(m, f, weights, coeff, detach=detach), dom)
        return L_y, L_g, L_l

    def saddle_value(tape, p):
        # reversal with coeff -1 is an identity in both passes: plain gradient of the saddle value
        return total_loss(*components(p, -1.0), omega, 1.0)

    def descent_target(tape, p):
        return objective(*components(p, 1.0), omega, 1.0)

    return model, saddle_value, descent_target, omega


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    lines = getattr(terminalreporter.config, "_acceptance_lines", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines.items()):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Criterion number -> one PASS/FAIL line, echoed in the terminal summary."""
    lines = {}
    request.config._acceptance_lines = lines
    return lines
