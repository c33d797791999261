"""Prompt embedding invariants: norms, asymmetry, and composition."""

import numpy as np
import pytest

from fxdistill.effects import EffectSpec, default_registry
from fxdistill.errors import ConfigError
from fxdistill.prompts import (DESCRIPTOR_DIM, TRIGGER_DIM, PromptEmb,
                               compose_prompt, descriptor_vector,
                               general_prompt, student_prompt, teacher_prompt)


def spec(i, seed):
    return EffectSpec(id=i, kind="identity", descriptor_seed=seed)


def unit(i, d=DESCRIPTOR_DIM):
    v = np.zeros(d)
    v[i] = 1.0
    return v


def test_prompt_norm_validation():
    PromptEmb(np.zeros(TRIGGER_DIM), unit(0))
    PromptEmb(unit(2, TRIGGER_DIM), unit(0))
    with pytest.raises(ConfigError):
        PromptEmb(2.0 * unit(0, TRIGGER_DIM), unit(0))
    with pytest.raises(ConfigError):
        PromptEmb(np.zeros(TRIGGER_DIM), 0.5 * unit(0))


def test_prompt_vector_layout_and_immutability():
    p = PromptEmb(unit(1, TRIGGER_DIM), unit(3))
    assert p.dim == TRIGGER_DIM + DESCRIPTOR_DIM
    np.testing.assert_array_equal(p.vector[:TRIGGER_DIM], p.trigger)
    np.testing.assert_array_equal(p.vector[TRIGGER_DIM:], p.descriptor)
    with pytest.raises(ValueError):
        p.trigger[0] = 5.0


def test_descriptor_vector_is_deterministic_and_role_keyed():
    a = descriptor_vector(42, "teacher")
    b = descriptor_vector(42, "teacher")
    np.testing.assert_array_equal(a, b)
    assert np.linalg.norm(a) == pytest.approx(1.0)
    assert not np.array_equal(a, descriptor_vector(42, "student"))
    assert not np.array_equal(a, descriptor_vector(43, "teacher"))


def test_teacher_prompt_has_no_trigger():
    p = teacher_prompt(spec(3, 11))
    assert np.all(p.trigger == 0.0)
    np.testing.assert_array_equal(p.descriptor, descriptor_vector(11, "teacher"))


def test_student_prompt_is_one_hot_at_trigger_index():
    p = student_prompt(spec(5, 11))
    want = np.zeros(TRIGGER_DIM)
    want[5] = 1.0
    np.testing.assert_array_equal(p.trigger, want)
    np.testing.assert_array_equal(p.descriptor, descriptor_vector(11, "student"))
    with pytest.raises(ConfigError):
        student_prompt(spec(TRIGGER_DIM, 11))


def test_student_never_equals_teacher_even_with_shared_seed():
    s = spec(0, 99)
    assert not student_prompt(s).allclose(teacher_prompt(s))


def test_general_prompt_is_fixed():
    a = general_prompt()
    b = general_prompt()
    assert a.allclose(b)
    assert np.all(a.trigger == 0.0)


def test_compose_prompt_mixes_triggers_equally():
    reg = default_registry(seed=0)
    p = reg.compose_prompt(0, 3)
    want = np.zeros(TRIGGER_DIM)
    want[0] = want[3] = 1.0 / np.sqrt(2.0)
    np.testing.assert_allclose(p.trigger, want, atol=1e-15)
    assert np.linalg.norm(p.trigger) == pytest.approx(1.0)
    assert np.linalg.norm(p.descriptor) == pytest.approx(1.0)
    # Symmetric in the pair order.
    assert p.allclose(reg.compose_prompt(3, 0), tol=1e-15)


def test_compose_with_itself_is_the_student_prompt():
    reg = default_registry(seed=0)
    assert reg.compose_prompt(2, 2).allclose(reg.student_prompt(2), tol=1e-12)


def test_compose_descriptor_is_normalized_sum():
    reg = default_registry(seed=0)
    da = reg.student_prompt(1).descriptor
    db = reg.student_prompt(4).descriptor
    s = da + db
    np.testing.assert_allclose(reg.compose_prompt(1, 4).descriptor,
                               s / np.linalg.norm(s), atol=1e-15)


def test_compose_rejects_cancelling_descriptors(monkeypatch):
    import fxdistill.prompts as pr

    sa, sb = spec(0, 7), spec(1, 8)
    base = descriptor_vector(7, "student")

    def fake(seed, role, d_d=DESCRIPTOR_DIM):
        if role == "student" and seed == 8:
            return -base
        return pr.__dict__["_orig_dv"](seed, role, d_d)

    monkeypatch.setitem(pr.__dict__, "_orig_dv", descriptor_vector)
    monkeypatch.setattr(pr, "descriptor_vector", fake)
    with pytest.raises(ConfigError, match="cancel"):
        compose_prompt(sa, sb)


def test_custom_block_sizes():
    p = teacher_prompt(spec(0, 5), d_t=4, d_d=6)
    assert p.trigger.shape == (4,)
    assert p.descriptor.shape == (6,)
    assert p.dim == 10
