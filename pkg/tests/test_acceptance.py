"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The ablation-backed criteria (5, 6, 8) share one run of configs/desk_ablation.yaml,
about half an hour on one core. Set DECOLEARN_ABLATION_DIR to keep (or reuse) its outputs.
Run directly with ``python tests/test_acceptance.py``.
"""
import time

import numpy as np
import pytest

import test_deformation
import test_losses
import test_metrics
import test_models
import test_mri
import test_optim
import test_tensor
from conftest import ACCEPTANCE, DESK_CONFIG
from decolearn import tensor as T
from decolearn.cli import main
from decolearn.config import build_config
from decolearn.data import DatasetSpec, synthesize_dataset
from decolearn.deformation import warp
from decolearn.trainer import TrainConfig, train


def record(n: int, title: str, check):
    """Runs ``check`` (returns a detail string, raises on failure) and stores the outcome."""
    try:
        detail = check()
    except Exception as e:
        ACCEPTANCE[n] = (title, False, f"{type(e).__name__}: {e}".splitlines()[0][:160])
        print(f"FAIL {n}. {title}")
        raise
    ACCEPTANCE[n] = (title, True, detail)
    print(f"PASS {n}. {title}: {detail}")


def _timed(fn):
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def test_criterion_01_autodiff():
    def check():
        def run():
            for name in sorted(test_tensor.PRIMITIVES):
                test_tensor.test_primitive_gradients_match_finite_differences(name)
            test_models.test_recon_gradients_match_finite_differences()
            test_models.test_reg_gradients_match_finite_differences()
        dt = _timed(run)
        assert dt < 60, f"took {dt:.1f} s"
        return f"{len(test_tensor.PRIMITIVES)} primitives + 2 networks x 20 seeds, rtol 1e-4, {dt:.1f} s"
    record(1, "autodiff finite-difference checks", check)


def test_criterion_02_operator_algebra():
    def check():
        worst = max(test_mri.adjoint_gap(test_mri.random_model(s), s) for s in range(100))
        assert worst <= 1e-10, worst
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2, 2, 16, 12))
        k = T.fft2(T.Tensor(x, dtype=T.COMPLEX)).data
        assert abs(np.sum(k ** 2) - np.sum(x ** 2)) <= 1e-10 * np.sum(x ** 2)
        assert np.max(np.abs(T.ifft2(T.Tensor(k, dtype=T.COMPLEX)).data - x)) <= 1e-10
        img = T.Tensor(rng.standard_normal((3, 2, 9, 7)), dtype=T.COMPLEX)
        assert np.array_equal(warp(img, np.zeros((3, 2, 9, 7))).data, img.data)
        return f"max relative adjoint gap {worst:.1e} over 100 models; fft unitary; zero warp exact"
    record(2, "operator algebra", check)


def test_criterion_03_oracles():
    def check():
        test_losses.test_lcc_matches_bruteforce_oracle()
        test_losses.test_smoothness_cases()
        test_losses.test_finite_diff_matches_elementwise_oracle()
        test_deformation.test_endpoint_error_cases()
        test_optim.test_single_step_matches_scalar_oracle()
        test_losses.test_reg_loss_field_gradient_matches_finite_differences()
        return "LCC, smoothness, finite_diff, endpoint error, Adam step match brute-force oracles"
    record(3, "oracle equivalence", check)


def test_criterion_04_noise_calibration():
    def check():
        test_mri.test_noise_calibration_40db()
        return "measured SNR within 0.5 dB of 40 dB"
    record(4, "noise calibration", check)


@pytest.mark.slow
def test_criterion_05_baseline_trend(desk_ablation):
    def check():
        zf = desk_ablation["summary"]["zero_filled"]["psnr_mean"]
        tv = desk_ablation["summary"]["tv"]["psnr_mean"]
        rt = desk_ablation["runtime_s"]["zero_filled"] + desk_ablation["runtime_s"]["tv"]
        detail = f"zero_filled {zf:.2f} dB, tv {tv:.2f} dB (gap {tv - zf:.2f}), {rt:.0f} s"
        assert zf + 3.0 <= tv, detail
        assert rt < 600, detail
        return detail
    record(5, "baseline trend", check)


@pytest.mark.slow
def test_criterion_06_ablation_trend(desk_ablation):
    def check():
        s = {m: v["psnr_mean"] for m, v in desk_ablation["summary"].items()}
        d = s["decolearn"]
        detail = (f"decolearn {d:.2f}, unregistered {s['a2a_unregistered']:.2f}, "
                  f"pretrained {s['a2a_pretrained_reg']:.2f}, oracle {s['a2a_oracle']:.2f} dB; "
                  f"{desk_ablation['wall_s'] / 60:.1f} min")
        assert d >= s["a2a_unregistered"] + 0.5, detail
        assert d >= s["a2a_pretrained_reg"], detail
        assert d >= s["a2a_oracle"] - 0.5, detail
        assert desk_ablation["wall_s"] < 45 * 60, detail
        return detail
    record(6, "ablation trend", check)


def test_criterion_07_warm_start():
    def check():
        cfg = build_config(DESK_CONFIG)
        ds = synthesize_dataset(DatasetSpec(**{**cfg.dataset.__dict__, "n_train": 8, "n_val": 0, "n_test": 0}))
        out = {}
        for mode in ("decolearn", "a2a_unregistered"):
            state, rows = train(ds["train"], TrainConfig(**{**cfg.train.__dict__, "iterations": 1, "mode": mode}),
                                cfg.model, cfg.loss.rec(), cfg.loss.reg())
            out[mode] = state.recon.params
        same = all(np.array_equal(out["decolearn"][k].data, out["a2a_unregistered"][k].data)
                   for k in out["decolearn"])
        assert same, "first reconstruction updates differ"
        return f"{len(out['decolearn'])} parameter tensors bit-identical after the first update"
    record(7, "warm-start equivalence", check)


@pytest.mark.slow
def test_criterion_08_registration(desk_ablation):
    def check():
        r = desk_ablation["registration"]["decolearn"]
        detail = f"EPE {r['epe']:.4f} px vs zero field {r['epe_zero_field']:.4f} px on {r['n']} held-out pairs"
        assert r["n"] >= 20, detail
        assert r["epe"] < r["epe_zero_field"], detail
        return detail
    record(8, "registration sanity", check)


def test_criterion_09_determinism_and_deployment(tmp_path):
    def check():
        small = ["--dataset.n_train", "4", "--dataset.n_val", "2", "--dataset.n_test", "3", "--dataset.size", "32"]
        tiny = ["--model.recon_blocks", "1", "--model.recon_width", "4", "--model.reg_levels", "2",
                "--model.reg_width", "4", "--train.iterations", "4", "--train.batch_size", "2",
                "--train.record_wall_time", "false"]
        data = tmp_path / "data"
        assert main(["synth-data", "--out", str(data)] + small) == 0
        assert main(["train", "--data", str(data), "--out", str(tmp_path / "a")] + tiny) == 0
        assert main(["train", "--manifest", str(tmp_path / "a" / "run_manifest.json"), "--out", str(tmp_path / "b")]) == 0
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
        ckpt = tmp_path / "a" / "final"
        main(["reconstruct", "--data", str(data), "--out", str(tmp_path / "r1"), "--checkpoint", str(ckpt), "--no-pgm"])
        for f in (ckpt / "reg").iterdir():
            f.write_bytes(b"corrupt")
        assert main(["reconstruct", "--data", str(data), "--out", str(tmp_path / "r2"),
                     "--checkpoint", str(ckpt), "--no-pgm"]) == 0
        assert (tmp_path / "r1" / "recon.dclt").read_bytes() == (tmp_path / "r2" / "recon.dclt").read_bytes()
        return "manifest rerun gives identical metrics.csv; reconstruct unaffected by corrupted registration"
    record(9, "determinism and deployment", check)


def test_criterion_10_metric_self_tests():
    def check():
        test_metrics.test_psnr_fixed_values()
        test_metrics.test_psnr_errors_and_complex()
        test_metrics.test_ssim_identity_and_inversion()
        return "PSNR/SSIM fixed-value and identity cases exact"
    record(10, "metric self-tests", check)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
