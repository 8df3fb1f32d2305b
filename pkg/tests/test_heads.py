import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from tinytrack import tensor as T
from tinytrack.boxes import BBox, giou, iou
from tinytrack.heads import (MIN_BOX_PX, AssignmentTarget, Head, ResponseMap, assign_targets,
                             bce_loss_variant, classification_loss, compute_losses, decode_box,
                             decode_boxes, encode_box, giou_tensor, predicted_boxes,
                             regression_loss, stack_targets, varifocal_loss)
from tinytrack.optim import fd_check
from tinytrack.tensor import DimensionError, Parameter, Tensor

GRID, STRIDE = (14, 14), 16


def centered_gt(side=112.0, crop=224.0):
    return BBox.from_center(crop / 2, crop / 2, side, side)


# head_forward

def test_zero_weight_cls_head_gives_half():
    head = Head(8, np.random.default_rng(0))
    for p in head.cls.parameters():
        p.data[:] = 0
    resp = head(Tensor(np.random.default_rng(1).normal(size=(2, 5, 8))))
    np.testing.assert_array_equal(resp.r_cls.data, 0.5)


def test_head_shapes_for_224_search():
    head = Head(16, np.random.default_rng(0))
    resp = head(Tensor(np.random.default_rng(1).normal(size=(196, 16))))
    assert resp.r_cls.shape == (196, 1) and resp.r_reg.shape == (196, 4)
    assert np.all((resp.r_cls.data > 0) & (resp.r_cls.data < 1))
    assert np.all(resp.r_reg.data > 0)


def test_head_channel_mismatch():
    with pytest.raises(DimensionError):
        Head(8, np.random.default_rng(0))(Tensor(np.ones((3, 6))))


def test_gradient_reaches_both_heads():
    rng = np.random.default_rng(2)
    with T.default_dtype(np.float64):
        head = Head(8, rng)
        resp = head(Tensor(rng.normal(size=(1, 16, 8))))
    gt = BBox(5.0, 6.0, 14.0, 12.0)
    out = compute_losses(resp, stack_targets([assign_targets(gt, (4, 4), 8)]), (4, 4), 8)
    T.backward(out.total, head.parameters())
    assert all(np.any(p.grad != 0) for p in head.parameters())


# box decoding

def test_decode_center_token_quarter_distances():
    reg = np.full((196, 4), 0.25)
    index = 7 * 14 + 7  # token centered at (120, 120)
    box = decode_box(index, reg, GRID, STRIDE)
    assert (box.w, box.h) == (112.0, 112.0)
    assert box.center == (120.0, 120.0)


def test_decode_zero_distances_floor_at_one_pixel():
    box = decode_box(0, np.zeros((196, 4)), GRID, STRIDE)
    assert box.w == MIN_BOX_PX and box.h == MIN_BOX_PX
    assert (box.x, box.y) == (8.0, 8.0)


def test_decode_index_out_of_range():
    with pytest.raises(IndexError):
        decode_box(196, np.zeros((196, 4)), GRID, STRIDE)


def test_encode_decode_round_trip_everywhere():
    gt = BBox(30.5, 41.0, 120.25, 90.0)
    reg = np.stack([encode_box(gt, i, GRID, STRIDE) for i in range(196)])
    for i in range(196):
        got = decode_box(i, reg, GRID, STRIDE).as_array()
        np.testing.assert_allclose(got, gt.as_array(), atol=1e-4)
    np.testing.assert_allclose(decode_boxes(reg, GRID, STRIDE), np.tile(gt.as_array(), (196, 1)), atol=1e-4)


def test_predicted_boxes_agree_with_decode():
    reg = np.random.default_rng(3).uniform(0.05, 0.4, size=(196, 4))
    xyxy = predicted_boxes(Tensor(reg), GRID, STRIDE).data * 224
    xywh = np.concatenate([xyxy[:, :2], xyxy[:, 2:] - xyxy[:, :2]], axis=1)
    np.testing.assert_allclose(xywh, decode_boxes(reg, GRID, STRIDE), atol=1e-4)


# iou / giou

def test_identical_boxes():
    b = BBox(3, 4, 5, 6)
    assert iou(b, b) == 1.0 and giou(b, b) == 1.0


def test_disjoint_unit_boxes_giou():
    a, b = BBox(0, 0, 1, 1), BBox(2, 2, 1, 1)
    assert iou(a, b) == 0.0
    assert giou(a, b) == pytest.approx(-7 / 9, abs=1e-12)


def test_half_overlap_iou():
    assert iou(BBox(0, 0, 2, 1), BBox(1, 0, 2, 1)) == pytest.approx(1 / 3, abs=1e-12)


box_st = st.tuples(st.floats(-50, 50), st.floats(-50, 50), st.floats(0.1, 60), st.floats(0.1, 60))


@settings(max_examples=200, deadline=None)
@given(box_st, box_st)
def test_giou_never_exceeds_iou(a, b):
    a, b = BBox(*a), BBox(*b)
    assert giou(a, b) <= iou(a, b) + 1e-12
    assert -1 < giou(a, b) <= 1
    assert iou(a, b) == pytest.approx(oracles.box_iou(a.as_array(), b.as_array()), abs=1e-12)


def test_giou_equals_iou_when_enclosure_is_union():
    a, b = BBox(0, 0, 2, 1), BBox(1, 0, 2, 1)  # aligned rows: enclosure = union
    assert giou(a, b) == pytest.approx(iou(a, b), abs=1e-15)


def test_giou_tensor_matches_scalar_version():
    rng = np.random.default_rng(4)
    pred = np.sort(rng.uniform(0, 1, size=(6, 2, 2)), axis=1).transpose(0, 2, 1).reshape(6, 4)
    pred = pred[:, [0, 2, 1, 3]]
    gt = np.array([0.2, 0.3, 0.7, 0.6])
    got = giou_tensor(Tensor(pred.astype(np.float64)), gt).data
    for i in range(6):
        ref = giou(BBox.from_xyxy(*pred[i]), BBox.from_xyxy(*gt))
        assert got[i] == pytest.approx(ref, abs=1e-12)


# varifocal loss

def test_vfl_examples():
    assert float(varifocal_loss(0.5, 0.0).data) == pytest.approx(0.12997, abs=1e-5)
    assert float(varifocal_loss(0.5, 0.5).data) == pytest.approx(0.34657, abs=1e-5)
    assert float(varifocal_loss(1 - 1e-9, 1.0).data) == pytest.approx(0.0, abs=2e-6)


def test_vfl_clamps_endpoints():
    out = varifocal_loss(np.array([0.0, 1.0]), np.array([1.0, 0.0])).data
    assert np.all(np.isfinite(out))
    assert out[0] == pytest.approx(-math.log(1e-6), rel=1e-6)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-4, 1 - 1e-4), st.floats(0.0, 1.0))
def test_vfl_matches_scalar_oracle(p, q):
    got = float(varifocal_loss(np.array(p), np.array(q)).data)
    assert got == pytest.approx(oracles.varifocal(p, q), rel=1e-9, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-4, 1 - 1e-4))
def test_vfl_reduces_to_bce_and_focal(p):
    # q = 1: plain BCE with label 1
    assert float(varifocal_loss(np.array(p), np.array(1.0)).data) == pytest.approx(-math.log(p), rel=1e-9)
    # q = 0: focal-weighted BCE on the negative class
    neg = float(varifocal_loss(np.array(p), np.array(0.0), alpha=0.75, gamma=2.0).data)
    assert neg == pytest.approx(0.75 * p ** 2 * -math.log(1 - p), rel=1e-9)


# classification / regression losses

def two_location_assignment(q_first=0.6):
    a = AssignmentTarget(np.array([True, False]), np.array([0.0, 0.0, 1.0, 1.0]))
    return a, np.array([q_first, 0.0])


def test_classification_loss_two_location_hand_sum():
    p = np.array([0.7, 0.2])
    a, q = two_location_assignment(0.6)
    got = float(classification_loss(Tensor(p), a, None, q=q).data)
    ref = (-0.6 * (0.6 * math.log(0.7) + 0.4 * math.log(0.3))
           - 0.75 * 0.2 ** 2 * math.log(0.8)) / 1
    assert got == pytest.approx(ref, rel=1e-12)


def test_classification_target_is_current_iou():
    grid, stride = (2, 2), 8
    gt = BBox(0.0, 0.0, 8.0, 8.0)
    a = assign_targets(gt, grid, stride)
    reg = np.array([[0.25, 0.25, 0.25, 0.25]] * 4)  # exact box at token 0
    pred = predicted_boxes(Tensor(reg), grid, stride)
    classification_loss(Tensor(np.full(4, 0.5)), a, pred)
    np.testing.assert_allclose(a.q, [1.0, 0.0, 0.0, 0.0], atol=1e-12)


def test_classification_loss_perfect_prediction_is_near_zero():
    a, q = AssignmentTarget(np.array([True, False]), np.zeros(4)), np.array([1.0, 0.0])
    got = float(classification_loss(Tensor(np.array([1 - 1e-9, 1e-9])), a, None, q=q).data)
    assert got == pytest.approx(0.0, abs=2e-6)


def test_regression_loss_single_positive():
    gt = np.array([0.0, 0.0, 1.0, 1.0])
    # giou = 0.5: a box of half the area inside the target
    pred = Tensor(np.array([[0.0, 0.0, 0.5, 1.0], [0.3, 0.3, 0.4, 0.4]]))
    a = AssignmentTarget(np.array([True, False]), gt)
    got = float(regression_loss(Tensor(np.array([0.8, 0.9])), pred, a).data)
    assert got == pytest.approx(0.8 * 0.5, abs=1e-12)


def test_regression_loss_vanishes_with_zero_scores_or_perfect_boxes():
    gt = np.array([0.1, 0.1, 0.6, 0.7])
    a = AssignmentTarget(np.array([True, True]), gt)
    pred = Tensor(np.array([[0.0, 0.0, 0.5, 1.0], [0.2, 0.2, 0.4, 0.4]]))
    assert float(regression_loss(Tensor(np.zeros(2)), pred, a).data) == 0.0
    perfect = Tensor(np.tile(gt, (2, 1)))
    assert float(regression_loss(Tensor(np.array([0.9, 0.4])), perfect, a).data) == pytest.approx(0, abs=1e-15)


def test_regression_weight_is_detached():
    gt = np.array([0.1, 0.1, 0.6, 0.7])
    a = AssignmentTarget(np.array([True]), gt)
    with T.default_dtype(np.float64):
        p = Parameter(np.array([0.5]))
        pred = Parameter(np.array([[0.0, 0.0, 0.5, 0.5]]))
    T.backward(regression_loss(p, pred, a), [p, pred])
    assert p.grad is None or np.all(p.grad == 0)
    assert np.any(pred.grad != 0)


# assignment

def test_whole_crop_gt_makes_everything_positive():
    a = assign_targets(BBox(0, 0, 224, 224), GRID, STRIDE)
    assert a.positive.all() and a.num_positive == 196


def test_tiny_box_gets_nearest_center():
    a = assign_targets(BBox(17.0, 18.0, 4.0, 4.0), GRID, STRIDE)  # between centers 8 and 24
    assert a.num_positive == 1
    assert np.flatnonzero(a.positive)[0] == 1 * 14 + 1


def test_centered_112_gt_gives_7x7():
    a = assign_targets(centered_gt(), GRID, STRIDE)
    assert a.num_positive == 49
    rows, cols = np.divmod(np.flatnonzero(a.positive), 14)
    assert set(rows) == set(cols) == set(range(3, 10))


def test_gt_outside_crop_has_no_positives():
    a = assign_targets(BBox(300, 300, 20, 20), GRID, STRIDE)
    assert a.num_positive == 0


def test_q_only_on_positives():
    rng = np.random.default_rng(5)
    with T.default_dtype(np.float64):
        head = Head(8, rng)
        resp = head(Tensor(rng.normal(size=(1, 16, 8))))
    a = stack_targets([assign_targets(BBox(4.0, 4.0, 12.0, 10.0), (4, 4), 8)])
    out = compute_losses(resp, a, (4, 4), 8)
    assert np.all(out.q[~a.positive] == 0)
    assert np.all((out.q >= 0) & (out.q <= 1))


# BCE variant

def test_bce_examples():
    assert float(bce_loss_variant(np.array([0.5]), np.array([1])).data) == pytest.approx(math.log(2), abs=1e-12)
    assert float(bce_loss_variant(np.array([1 - 1e-9]), np.array([1])).data) == pytest.approx(0, abs=2e-6)


def test_bce_mean_over_toy_map():
    p = np.array([0.9, 0.2, 0.4, 0.6])
    y = np.array([1, 0, 0, 1])
    ref = -(math.log(0.9) + math.log(0.8) + math.log(0.6) + math.log(0.6)) / 4
    assert float(bce_loss_variant(p, y).data) == pytest.approx(ref, rel=1e-12)


# total loss properties

def toy_response(seed, batch=2, grid=(4, 4)):
    rng = np.random.default_rng(seed)
    L = grid[0] * grid[1]
    with T.default_dtype(np.float64):
        cls = Parameter(rng.normal(size=(batch, L, 1)))
        reg = Parameter(rng.normal(-1.5, 0.5, size=(batch, L, 4)))
    return cls, reg


def toy_assignment(seed, batch=2, grid=(4, 4), stride=8):
    rng = np.random.default_rng(seed + 100)
    boxes = [BBox(float(rng.uniform(0, 10)), float(rng.uniform(0, 10)),
                  float(rng.uniform(6, 20)), float(rng.uniform(6, 20))) for _ in range(batch)]
    return stack_targets([assign_targets(b, grid, stride) for b in boxes])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["vfl", "bce"]))
def test_total_loss_is_non_negative(seed, mode):
    cls, reg = toy_response(seed)
    resp = ResponseMap(T.sigmoid(cls), T.sigmoid(reg))
    out = compute_losses(resp, toy_assignment(seed), (4, 4), 8, loss_mode=mode)
    assert float(out.total.data) >= 0


def test_unknown_loss_mode():
    cls, reg = toy_response(0)
    with pytest.raises(ValueError):
        compute_losses(ResponseMap(T.sigmoid(cls), T.sigmoid(reg)), toy_assignment(0), (4, 4), 8,
                       loss_mode="focal")


@pytest.mark.parametrize("mode", ["vfl", "bce"])
def test_loss_gradients_pass_fd_check(mode):
    cls, reg = toy_response(7)
    a = toy_assignment(7)
    frozen = compute_losses(ResponseMap(T.sigmoid(cls), T.sigmoid(reg)), a, (4, 4), 8, loss_mode=mode)

    def f():
        return compute_losses(ResponseMap(T.sigmoid(cls), T.sigmoid(reg)), a, (4, 4), 8,
                              loss_mode=mode, frozen=frozen).total

    assert fd_check(f, [cls, reg]) < 1e-3
