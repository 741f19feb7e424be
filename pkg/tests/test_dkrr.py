from fractions import Fraction

import numpy as np
import pytest

from mixkrr.dkrr import (
    AuditLog,
    DkrrEnsemble,
    LocalMachine,
    ensemble_error_norms,
    ensemble_from_dict,
    ensemble_spectral_coeffs,
    ensemble_to_dict,
    fit_distributed,
    generate_parallel,
    lambda_rule,
    max_machines,
    partition_tandem,
    predict,
)
from mixkrr.errors import ConfigError, InputError, MixkrrError
from mixkrr.kernelspec import brownian_kernel, brownian_spectral_model, gaussian_kernel, synthesize_target
from mixkrr.krr import KrrModel, error_norms, fit, predict as krr_predict, spectral_coeffs
from mixkrr.sequencegen import Dataset, GaussCopulaAR1, IidUniform, generate

BM = brownian_kernel()
SM = brownian_spectral_model(200)
TARGET = synthesize_target(SM, 1.0)
GRID = np.linspace(0, 1, 21)


def ar1_data(n=60, seed=4):
    return generate(GaussCopulaAR1(rho=0.5, noise_sigma=0.2), TARGET, SM, n, seed)


# --- partitioning -----------------------------------------------------------------


def test_tandem_contiguous():
    data = Dataset(np.arange(6) / 10, np.arange(6))
    blocks = partition_tandem(data, 3)
    assert [b.y.tolist() for b in blocks] == [[0, 1], [2, 3], [4, 5]]
    assert [b.origin for b in blocks] == [f"tandem-block({j} of 3)" for j in (1, 2, 3)]


def test_tandem_identity_and_degenerate():
    data = ar1_data(7)
    assert partition_tandem(data, 1) == [data]
    singles = partition_tandem(data, 7)
    assert [b.x[0] for b in singles] == data.x.tolist()


@pytest.mark.parametrize("n,m", [(10, 3), (17, 5), (100, 7), (5, 5)])
def test_tandem_sizes_and_concat(n, m):
    data = ar1_data(n)
    blocks = partition_tandem(data, m)
    sizes = [len(b) for b in blocks]
    assert max(sizes) - min(sizes) <= 1 and sum(sizes) == n
    assert np.concatenate([b.x for b in blocks]).tobytes() == data.x.tobytes()
    assert all(b.process is data.process and b.seed == data.seed for b in blocks)


def test_tandem_bad_m():
    with pytest.raises(InputError):
        partition_tandem(ar1_data(5), 6)
    with pytest.raises(InputError):
        partition_tandem(ar1_data(5), 0)


def test_parallel_streams():
    spec = GaussCopulaAR1(rho=0.5)
    two = generate_parallel(spec, TARGET, SM, [50, 50], [1, 2])
    assert not np.array_equal(two[0].x, two[1].x)
    one = generate_parallel(spec, TARGET, SM, [50], [9])[0]
    assert one.x.tobytes() == generate(spec, TARGET, SM, 50, 9).x.tobytes()
    assert two[1].origin == "parallel-stream(2 of 2)"
    with pytest.raises(ConfigError):
        generate_parallel(spec, TARGET, SM, [5, 5], [3, 3])


def test_parallel_streams_uncorrelated():
    a, b = generate_parallel(GaussCopulaAR1(rho=0.5), TARGET, SM, [10_000, 10_000], [11, 12])
    assert abs(np.corrcoef(a.x, b.x)[0, 1]) <= 0.03


# --- ensemble -----------------------------------------------------------------------


def test_single_machine_is_krr():
    data = ar1_data(80)
    ens = fit_distributed([data], 0.05, BM)
    single = fit(data, 0.05, BM)
    assert np.max(np.abs(predict(ens, GRID) - krr_predict(single, GRID))) <= 1e-12
    assert ensemble_error_norms(ens, TARGET, SM) == error_norms(single, TARGET, SM)


def test_identical_subsets():
    data = ar1_data(30)
    ens = fit_distributed([data, data, data], 0.05, BM)
    local = krr_predict(fit(data, 0.05, BM), GRID)
    assert np.allclose(predict(ens, GRID), local, rtol=0, atol=1e-12)


def _constant_machine(j, value, size):
    # f = value * min(1, .) / 1, so f(1) = value
    return LocalMachine(j, KrrModel([1.0], [value], 0.1, BM), size)


def test_weighted_mean_examples():
    ens = DkrrEnsemble((_constant_machine(0, 0.2, 5), _constant_machine(1, 0.4, 5)), (5, 5), 0.1, BM)
    assert predict(ens, 1.0) == pytest.approx(0.3, abs=1e-15)
    ens = DkrrEnsemble((_constant_machine(0, 1.0, 1), _constant_machine(1, 0.0, 3)), (1, 3), 0.1, BM)
    assert ens.weights.tolist() == [0.25, 0.75]
    assert predict(ens, 1.0) == pytest.approx(0.25, abs=1e-15)


def test_weights_sum_to_one_exactly():
    ens = fit_distributed(partition_tandem(ar1_data(100), 7), 0.05, BM)
    assert sum(ens.weight_fractions) == Fraction(1)
    assert ens.weight_fractions[0] == Fraction(15, 100)


def test_ensemble_coeffs_are_mean():
    blocks = partition_tandem(ar1_data(40), 2)
    ens = fit_distributed(blocks, 0.05, BM)
    local = [spectral_coeffs(fit(b, 0.05, BM), SM) for b in blocks]
    assert np.max(np.abs(ensemble_spectral_coeffs(ens, SM) - 0.5 * (local[0] + local[1]))) <= 1e-12


def test_zero_local_models():
    zero = LocalMachine(0, KrrModel([0.5], [0.0], 0.1, BM), 3)
    ens = DkrrEnsemble((zero, LocalMachine(1, KrrModel([0.2], [0.0], 0.1, BM), 3)), (3, 3), 0.1, BM)
    errs = ensemble_error_norms(ens, TARGET, SM)
    c = TARGET.coeffs
    assert errs.rho_err == pytest.approx(np.sqrt(c @ c), rel=1e-12)
    assert errs.rkhs_err == pytest.approx(np.sqrt(np.sum(c * c / SM.mu)), rel=1e-12)


def test_audit_log_sees_only_scalars():
    ens = fit_distributed(partition_tandem(ar1_data(50), 5), 0.05, BM)
    predict(ens, GRID)
    assert [r[0] for r in ens.audit.records] == [0, 1, 2, 3, 4]
    assert all(r[2] == (GRID.size,) and r[3] == "float64" for r in ens.audit.records)
    with pytest.raises(MixkrrError):
        AuditLog().record(0, 3, np.zeros((3, 2)))


def test_jobs_do_not_change_result():
    blocks = partition_tandem(ar1_data(90), 3)
    a = fit_distributed(blocks, 0.05, BM, jobs=1)
    b = fit_distributed(blocks, 0.05, BM, jobs=3)
    assert predict(a, GRID).tobytes() == predict(b, GRID).tobytes()


def test_machine_error_is_annotated():
    with pytest.raises(InputError, match="machine 1"):
        fit_distributed([ar1_data(5), Dataset([], [])], 0.05, BM)
    with pytest.raises(ConfigError, match="machine 0"):
        fit_distributed([ar1_data(5)], -1.0, BM)


def test_ensemble_roundtrip():
    ens = fit_distributed(partition_tandem(ar1_data(33), 4), 0.02, BM)
    back = ensemble_from_dict(ensemble_to_dict(ens))
    assert back.sizes == ens.sizes and back.lam == ens.lam
    assert predict(back, GRID).tobytes() == predict(ens, GRID).tobytes()


def test_gaussian_ensemble_predicts():
    ens = fit_distributed(partition_tandem(ar1_data(40), 2), 0.05, gaussian_kernel(0.2))
    assert np.all(np.isfinite(predict(ens, GRID)))
    with pytest.raises(ConfigError):
        ensemble_error_norms(ens, TARGET, SM)


# --- budget rules ----------------------------------------------------------------------


def test_lambda_rule_examples():
    assert lambda_rule(256, 0.75, 0.5) == pytest.approx(0.0625, abs=1e-12)
    assert lambda_rule(1, 1.0, 0.5) == 1.0
    assert lambda_rule(10_000, 1.0, 0.5) == pytest.approx(10_000**-0.4, abs=1e-12)
    assert f"{lambda_rule(10_000, 1.0, 0.5):.5f}" == "0.02512"


def test_max_machines_examples():
    assert max_machines(10_000, 1.0, 0.5) == 2
    assert all(max_machines(n, 0.75, 0.5) == 1 for n in (1, 10, 10**6))
    assert max_machines(2**20, 1.0, 1.0) == 10
    assert max_machines(4096, 1.0, 0.5) == 2


def test_max_machines_rejects_small_exponents():
    with pytest.raises(ConfigError):
        max_machines(1000, 0.5, 0.5)
    with pytest.raises(ConfigError):
        lambda_rule(100, 1.5, 0.5)
