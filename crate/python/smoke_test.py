"""Smoke test for the priorsep_py extension module."""

import math
import os
import tempfile

import priorsep_py as ps

LEN = 4096


def test_priors_and_latents():
    h = ps.Prior("harmonic", signal_len=LEN)
    assert h.kind == "harmonic" and h.latent_dim == 100 and h.output_len == LEN
    z = ps.sample_latent(7, h.latent_dim)
    assert z == ps.sample_latent(7, h.latent_dim)
    assert all(-1.0 <= v <= 1.0 for v in z)
    x = h.generate(z)
    assert len(x) == LEN and all(math.isfinite(v) for v in x)
    g = h.generate_vjp(z, x)
    assert len(g) == h.latent_dim
    assert ps.project([2.0, -3.0, 0.5]) == [1.0, -1.0, 0.5]
    n = ps.Prior("neural", signal_len=1024, channels=[8, 4, 4, 1], latent_dim=16, seed=1)
    assert len(n.generate([0.1] * 16)) == 1024


def test_loss_and_separation():
    h = ps.Prior("harmonic", signal_len=LEN)
    p = ps.Prior("percussive", signal_len=LEN)
    s1 = h.generate(ps.sample_latent(1, 100))
    s2 = p.generate(ps.sample_latent(2, 100))
    mix = [a + b for a, b in zip(s1, s2)]
    b, grads = ps.total_loss(mix, [s1, s2])
    assert b["l_ms"] == 0.0 and len(grads) == 2
    r = ps.separate(mix, [h, p], iterations=40)
    assert len(r["sources"]) == 2 and len(r["trace"]) == 40
    assert r["final"]["total"] < r["initial"]["total"]
    report = ps.evaluate(r["sources"], [s1, s2])
    assert len(report) == 2 and all(math.isfinite(m["sir_db"]) for m in report)
    assert ps.evaluate([s1], [s1])[0]["spectral_snr_db"] == 100.0


def test_audio_and_errors():
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "x.wav")
        x = [0.25 * math.sin(0.01 * i) for i in range(2000)]
        ps.write_audio(path, x)
        y = ps.read_audio(path)
        assert max(abs(a - b) for a, b in zip(x, y)) <= 2.0**-15
        try:
            ps.read_audio(os.path.join(d, "missing.wav"))
        except OSError:
            pass
        else:
            raise AssertionError("missing file accepted")
    try:
        ps.Prior("violin")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown kind accepted")


if __name__ == "__main__":
    test_priors_and_latents()
    test_loss_and_separation()
    test_audio_and_errors()
    print("smoke test passed")
