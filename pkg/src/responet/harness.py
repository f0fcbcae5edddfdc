"""Losses, metrics, normalisation, the training loop, and evaluation reports.

``train`` runs full-batch Adam: one step per epoch over all samples and
all time indices (an optional time-index chunk size bounds memory for
the causal models without changing the math - gradients are accumulated
before the single step).  Train/test relative errors are recorded every
epoch; the train-side metric reuses the training-pass predictions, so
with dropout active it reflects the masked forward.  Runs are bit
reproducible from the seed in single-threaded mode: one ``default_rng``
stream drives initialisation (branch first, then trunk) and dropout.

``evaluate`` produces per-sample relative errors, flags the best and
worst samples, and dumps their trajectories and amplitude spectra.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np

from .neuralcore import (
    AdamState,
    LrSchedule,
    Mlp,
    RegConfig,
    adam_init,
    adam_step,
    init_mlp,
    lr_at,
    mlp_backward,
    mlp_forward,
    mlp_forward_cached,
)
from .operatornets import (
    ARCH_TAGS,
    CausalityModel,
    DeepOnetModel,
    MsDeepOnetModel,
    MsTrunk,
    PodDeepOnetModel,
    amplitude_spectrum,
    default_mstrunk_scales,
    pod_basis,
    window_matrix,
)


class DivergenceError(RuntimeError):
    """Training hit a non-finite loss."""


# ---------------------------------------------------------------------------
# losses and error measures


def loss_mse(pred: np.ndarray, truth: np.ndarray) -> float:
    """Mean over samples of the per-sample mean squared error."""
    pred, truth = np.asarray(pred, float), np.asarray(truth, float)
    if pred.shape != truth.shape:
        raise ValueError("prediction/truth shape mismatch")
    return float(((pred - truth) ** 2).mean(axis=1).mean())


def _weighted_row_weights(truth: np.ndarray, unit_weight_rows=()) -> np.ndarray:
    peaks = np.abs(truth).max(axis=1)
    weights = np.empty(len(truth))
    unit = set(int(i) for i in unit_weight_rows)
    for i, peak in enumerate(peaks):
        if peak > 0.0:
            weights[i] = 1.0 / peak
        elif i in unit:
            weights[i] = 1.0  # injected rest pair: reciprocal undefined, fixed to 1
        else:
            raise ValueError("all-zero truth row in weighted loss")
    return weights


def loss_weighted(pred: np.ndarray, truth: np.ndarray, unit_weight_rows=()) -> float:
    """MSE with each sample weighted by the reciprocal of its peak response.

    Rows listed in ``unit_weight_rows`` (the injected zero-response rest
    pair) get weight 1; any other all-zero truth row is an error.
    """
    pred, truth = np.asarray(pred, float), np.asarray(truth, float)
    if pred.shape != truth.shape:
        raise ValueError("prediction/truth shape mismatch")
    weights = _weighted_row_weights(truth, unit_weight_rows)
    return float((weights * ((pred - truth) ** 2).mean(axis=1)).mean())


def rel_l2_rows(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Per-sample relative L2 trajectory errors."""
    pred, truth = np.asarray(pred, float), np.asarray(truth, float)
    denom = (truth**2).sum(axis=1)
    if np.any(denom == 0.0):
        raise ValueError("zero-norm truth row in relative L2")
    return np.sqrt(((pred - truth) ** 2).sum(axis=1) / denom)


def rel_l2(pred: np.ndarray, truth: np.ndarray) -> float:
    """Corpus-average relative L2 error."""
    return float(rel_l2_rows(pred, truth).mean())


def rel_err(pred_row: np.ndarray, truth_row: np.ndarray) -> float:
    """Peak absolute error over peak absolute response for one sample."""
    pred_row, truth_row = np.asarray(pred_row, float), np.asarray(truth_row, float)
    peak = np.abs(truth_row).max()
    if peak == 0.0:
        raise ValueError("zero-norm truth row in relative error")
    return float(np.abs(pred_row - truth_row).max() / peak)


# ---------------------------------------------------------------------------
# normalisation


@dataclass
class NormStats:
    """Per-time-point ensemble statistics of the training rows."""

    mu_in: np.ndarray
    sd_in: np.ndarray
    mu_out: np.ndarray
    sd_out: np.ndarray


def gaussian_normalize(inputs: np.ndarray, outputs: np.ndarray):
    """Normalise rows by per-time-point training mean/SD (floored at 1e-12).

    Returns ``(inputs_norm, outputs_norm, stats)``; the same stats
    denormalise predictions and transform held-out data.
    """
    inputs, outputs = np.asarray(inputs, float), np.asarray(outputs, float)
    if len(inputs) < 2:
        raise ValueError("need at least two rows for ensemble statistics")
    stats = NormStats(
        mu_in=inputs.mean(axis=0),
        sd_in=np.maximum(inputs.std(axis=0), 1e-12),
        mu_out=outputs.mean(axis=0),
        sd_out=np.maximum(outputs.std(axis=0), 1e-12),
    )
    return normalize_inputs(inputs, stats), normalize_outputs(outputs, stats), stats


def normalize_inputs(inputs, stats: NormStats):
    return (np.asarray(inputs, float) - stats.mu_in) / stats.sd_in


def normalize_outputs(outputs, stats: NormStats):
    return (np.asarray(outputs, float) - stats.mu_out) / stats.sd_out


def denormalize_outputs(outputs, stats: NormStats):
    return np.asarray(outputs, float) * stats.sd_out + stats.mu_out


# ---------------------------------------------------------------------------
# configuration and history


@dataclass
class TrainConfig:
    architecture: str                      # one of ARCH_TAGS
    branch_dims: list
    trunk_dims: list = field(default_factory=list)
    activation: str = "tanh"
    scales: np.ndarray | None = None       # msdeeponet subnets
    pod_modes: int = 0
    use_output_bias: bool = False
    loss: str = "weighted_mse"             # "mse" | "weighted_mse"
    schedule: LrSchedule = None
    epochs: int = 1
    reg: RegConfig = field(default_factory=RegConfig)
    seed: int = 0
    normalization: str = "none"            # "none" | "gaussian"
    batch: object = "full"                 # "full" or a time-index chunk size
    include_ic_pair: bool = False

    def __post_init__(self):
        if self.architecture not in ARCH_TAGS:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.loss not in ("mse", "weighted_mse"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.normalization not in ("none", "gaussian"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.schedule is None:
            self.schedule = LrSchedule([(self.epochs, 1e-3)])
        if self.batch != "full" and (not isinstance(self.batch, int) or self.batch < 1):
            raise ValueError("batch must be 'full' or a positive chunk size")


@dataclass
class RunHistory:
    """Per-epoch curves plus end-of-run summaries."""

    epoch: np.ndarray
    lr: np.ndarray
    loss: np.ndarray
    train_rel_l2: np.ndarray
    test_rel_l2: np.ndarray
    final_test_rel_err: np.ndarray
    wall_clock: float
    best_epoch: int
    best_test_rel_l2: float
    best_model: object = None
    norm: NormStats | None = None


def save_history(history: RunHistory, path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,lr,loss,train_rel_l2,test_rel_l2\n")
        for row in zip(history.epoch, history.lr, history.loss, history.train_rel_l2, history.test_rel_l2):
            fh.write("%d,%.17g,%.17g,%.17g,%.17g\n" % row)


# ---------------------------------------------------------------------------
# architecture adapters: batched forward/backward over the whole dataset


class _BranchTrunkCore:
    """Shared parameter bookkeeping for models with a branch group and a trunk group."""

    def __init__(self, branch: Mlp, trunk_nets: list, reg: RegConfig, bias_param):
        self.branch = branch
        self.trunk_nets = trunk_nets
        self.reg = reg
        self.bias_param = bias_param  # (1,) array or None

    def params(self):
        out = self.branch.params()
        for net in self.trunk_nets:
            out += net.params()
        if self.bias_param is not None:
            out.append(self.bias_param)
        return out

    def weight_decay(self):
        # L2 applies to weight matrices only, never biases
        decays = [self.reg.l2_branch] * len(self.branch.weights)
        decays += [0.0] * len(self.branch.biases)
        for net in self.trunk_nets:
            decays += [self.reg.l2_trunk] * len(net.weights)
            decays += [0.0] * len(net.biases)
        if self.bias_param is not None:
            decays.append(0.0)
        return decays


class _DeepOnetTrainer(_BranchTrunkCore):
    def __init__(self, model: DeepOnetModel, u, x, t_grid, reg, bias_param):
        super().__init__(model.branch, [model.trunk], reg, bias_param)
        self.model = model
        self.u = u
        self.x = x
        self.t_grid = t_grid

    def forward_backward(self, dpred_fn, rng):
        b, cb = mlp_forward_cached(self.branch, self.u, self.reg.dropout_branch, rng)
        trunk = self.trunk_nets[0]
        t, ct = mlp_forward_cached(trunk, self.t_grid, self.reg.dropout_trunk, rng)
        pred = b @ t.T
        if self.bias_param is not None:
            pred = pred + self.bias_param[0]
        dpred, loss = dpred_fn(pred)
        gb, _ = mlp_backward(self.branch, cb, dpred @ t)
        gt, _ = mlp_backward(trunk, ct, dpred.T @ b)
        grads = gb.params() + gt.params()
        if self.bias_param is not None:
            grads.append(np.array([dpred.sum()]))
        return pred, loss, grads

    def predict(self, u):
        b = mlp_forward(self.branch, u)
        t = mlp_forward(self.trunk_nets[0], self.t_grid)
        pred = b @ t.T
        if self.bias_param is not None:
            pred = pred + self.bias_param[0]
        return pred


class _CausalityTrainer(_BranchTrunkCore):
    """Full-batch trainer over every (signal, time-index) window pair.

    The window design matrix for the training signals is built once when
    the batch is formed (windows themselves are strided views; the
    single contiguous copy here is what BLAS needs anyway).  Test-time
    evaluation runs one signal at a time straight off the strided views.
    """

    # window design matrices above this size stay as per-signal strided views
    EVAL_DESIGN_BUDGET = 512 * 1024 * 1024

    def __init__(self, model: CausalityModel, u, x, reg, bias_param, chunk):
        super().__init__(model.branch, [model.trunk], reg, bias_param)
        self.model = model
        self.x = x
        self.n, self.m = u.shape
        self.signals = u
        self.design = np.vstack([window_matrix(row, model.convolutional) for row in u])
        self.t_grid = (np.arange(1, self.m + 1) * model.dt)[:, None]
        self.chunk = self.m if chunk == "full" else min(chunk, self.m)
        self._eval_u = None
        self._eval_design = None

    def prepare_eval(self, u):
        """Cache the held-out design matrix once; epoch-loop monitoring reuses it."""
        if u.size * self.m * 8 <= self.EVAL_DESIGN_BUDGET:
            self._eval_u = u
            self._eval_design = np.vstack([window_matrix(row, self.model.convolutional) for row in u])

    def forward_backward(self, dpred_fn, rng):
        branch, trunk = self.branch, self.trunk_nets[0]
        n, m, width = self.n, self.m, branch.dims[-1]
        if self.chunk == m:
            b, cb = mlp_forward_cached(branch, self.design, self.reg.dropout_branch, rng)
            t, ct = mlp_forward_cached(trunk, self.t_grid, self.reg.dropout_trunk, rng)
            b3 = b.reshape(n, m, width)
            pred = np.einsum("lpk,pk->lp", b3, t)
            if self.bias_param is not None:
                pred = pred + self.bias_param[0]
            dpred, loss = dpred_fn(pred)
            gb, _ = mlp_backward(branch, cb, (dpred[:, :, None] * t[None]).reshape(n * m, width))
            gt, _ = mlp_backward(trunk, ct, np.einsum("lp,lpk->pk", dpred, b3))
            grads = gb.params() + gt.params()
            if self.bias_param is not None:
                grads.append(np.array([dpred.sum()]))
            return pred, loss, grads
        # chunked over time indices: same single Adam step, bounded memory
        pred = np.empty((n, m))
        caches = []
        rows = self.design.reshape(n, m, self.m)
        t_all, ct = mlp_forward_cached(trunk, self.t_grid, self.reg.dropout_trunk, rng)
        for start in range(0, m, self.chunk):
            stop = min(start + self.chunk, m)
            block = rows[:, start:stop, :].reshape(-1, self.m)
            b, cb = mlp_forward_cached(branch, block, self.reg.dropout_branch, rng)
            b3 = b.reshape(n, stop - start, width)
            pred[:, start:stop] = np.einsum("lpk,pk->lp", b3, t_all[start:stop])
            caches.append((start, stop, cb, b3))
        if self.bias_param is not None:
            pred = pred + self.bias_param[0]
        dpred, loss = dpred_fn(pred)
        grads = None
        dt_all = np.zeros_like(t_all)
        for start, stop, cb, b3 in caches:
            dblock = dpred[:, start:stop]
            gb, _ = mlp_backward(
                branch, cb, (dblock[:, :, None] * t_all[start:stop][None]).reshape(-1, width)
            )
            dt_all[start:stop] = np.einsum("lp,lpk->pk", dblock, b3)
            if grads is None:
                grads = gb.params()
            else:
                grads = [a + b_ for a, b_ in zip(grads, gb.params())]
        gt, _ = mlp_backward(trunk, ct, dt_all)
        grads += gt.params()
        if self.bias_param is not None:
            grads.append(np.array([dpred.sum()]))
        return pred, loss, grads

    def predict(self, u):
        branch, trunk = self.branch, self.trunk_nets[0]
        t = mlp_forward(trunk, self.t_grid)
        if self._eval_design is not None and u is self._eval_u:
            b = mlp_forward(branch, self._eval_design).reshape(len(u), self.m, -1)
            out = np.einsum("lpk,pk->lp", b, t)
        else:
            out = np.empty((len(u), self.m))
            for i, row in enumerate(u):
                # materialise the strided window view: BLAS needs plain strides
                windows = np.ascontiguousarray(window_matrix(row, self.model.convolutional))
                b = mlp_forward(branch, windows)
                out[i] = np.einsum("pk,pk->p", b, t)
        if self.bias_param is not None:
            out = out + self.bias_param[0]
        return out


class _PodTrainer(_BranchTrunkCore):
    def __init__(self, model: PodDeepOnetModel, u, x, reg):
        super().__init__(model.branch, [], reg, None)
        self.model = model
        self.u = u
        self.x = x

    def forward_backward(self, dpred_fn, rng):
        coef, cb = mlp_forward_cached(self.branch, self.u, self.reg.dropout_branch, rng)
        pred = coef @ self.model.basis + self.model.mean
        dpred, loss = dpred_fn(pred)
        gb, _ = mlp_backward(self.branch, cb, dpred @ self.model.basis.T)
        return pred, loss, gb.params()

    def predict(self, u):
        coef = mlp_forward(self.branch, u)
        return coef @ self.model.basis + self.model.mean


class _MsTrainer(_BranchTrunkCore):
    def __init__(self, model: MsDeepOnetModel, u, x, t_unit, reg, bias_param):
        super().__init__(model.branch, list(model.trunk.subnets), reg, bias_param)
        self.model = model
        self.u = u
        self.x = x
        self.t_unit = t_unit

    def params(self):
        out = super().params()
        # combo weights are trainable but sit outside the L2 groups
        out.insert(len(out) if self.bias_param is None else len(out) - 1, self.model.trunk.combo_weights)
        return out

    def weight_decay(self):
        decays = super().weight_decay()
        decays.insert(len(decays) if self.bias_param is None else len(decays) - 1, 0.0)
        return decays

    def _trunk_forward(self, rng, cached: bool):
        trunk = self.model.trunk
        outs, caches = [], []
        for net, scale in zip(trunk.subnets, trunk.scales):
            if cached:
                o, c = mlp_forward_cached(net, scale * self.t_unit, self.reg.dropout_trunk, rng)
                caches.append(c)
            else:
                o = mlp_forward(net, scale * self.t_unit)
            outs.append(o)
        total = sum(w * o for w, o in zip(trunk.combo_weights, outs))
        return total, outs, caches

    def forward_backward(self, dpred_fn, rng):
        b, cb = mlp_forward_cached(self.branch, self.u, self.reg.dropout_branch, rng)
        t, outs, caches = self._trunk_forward(rng, cached=True)
        pred = b @ t.T
        if self.bias_param is not None:
            pred = pred + self.bias_param[0]
        dpred, loss = dpred_fn(pred)
        gb, _ = mlp_backward(self.branch, cb, dpred @ t)
        dt = dpred.T @ b
        grads = gb.params()
        trunk = self.model.trunk
        for net, w, cache in zip(trunk.subnets, trunk.combo_weights, caches):
            gnet, _ = mlp_backward(net, cache, w * dt)
            grads += gnet.params()
        dw = np.array([float(np.sum(dt * o)) for o in outs])
        grads.append(dw)
        if self.bias_param is not None:
            grads.append(np.array([dpred.sum()]))
        return pred, loss, grads

    def predict(self, u):
        b = mlp_forward(self.branch, u)
        t, _, _ = self._trunk_forward(None, cached=False)
        pred = b @ t.T
        if self.bias_param is not None:
            pred = pred + self.bias_param[0]
        return pred


def _build_model_and_trainer(config: TrainConfig, u_train, x_train, dt, rng):
    arch = config.architecture
    bias_param = np.zeros(1) if config.use_output_bias else None
    if arch == "deeponet":
        branch = init_mlp(config.branch_dims, config.activation, rng)
        trunk = init_mlp(config.trunk_dims, config.activation, rng)
        model = DeepOnetModel(branch=branch, trunk=trunk)
        m = u_train.shape[1]
        t_grid = (np.arange(m) * dt)[:, None]
        trainer = _DeepOnetTrainer(model, u_train, x_train, t_grid, config.reg, bias_param)
    elif arch in ("causality", "causality_noconv"):
        branch = init_mlp(config.branch_dims, config.activation, rng)
        trunk = init_mlp(config.trunk_dims, config.activation, rng)
        model = CausalityModel(
            branch=branch, trunk=trunk, dt=dt, m=u_train.shape[1],
            convolutional=(arch == "causality"),
        )
        trainer = _CausalityTrainer(model, u_train, x_train, config.reg, bias_param, config.batch)
    elif arch == "pod":
        if not 1 <= config.pod_modes <= len(x_train):
            raise ValueError("pod_modes must lie in 1..n_train")
        mean, basis = pod_basis(x_train, config.pod_modes)
        branch = init_mlp(list(config.branch_dims[:-1]) + [config.pod_modes], config.activation, rng)
        model = PodDeepOnetModel(branch=branch, basis=basis, mean=mean)
        trainer = _PodTrainer(model, u_train, x_train, config.reg)
    elif arch == "msdeeponet":
        branch = init_mlp(config.branch_dims, config.activation, rng)
        scales = np.asarray(config.scales if config.scales is not None else default_mstrunk_scales())
        subnets = [init_mlp(config.trunk_dims, config.activation, rng) for _ in scales]
        trunk = MsTrunk(subnets=subnets, scales=scales, combo_weights=np.ones(len(scales)))
        model = MsDeepOnetModel(branch=branch, trunk=trunk)
        m = u_train.shape[1]
        t_unit = (np.arange(m) / max(m - 1, 1))[:, None]  # time scaled to [0, 1]
        trainer = _MsTrainer(model, u_train, x_train, t_unit, config.reg, bias_param)
    else:  # pragma: no cover - guarded by TrainConfig
        raise ValueError(arch)
    return model, trainer, bias_param


def _snapshot(trainer):
    return [p.copy() for p in trainer.params()]


def _restore(trainer, snapshot):
    for p, s in zip(trainer.params(), snapshot):
        p[...] = s


def train(config: TrainConfig, train_ds, test_ds):
    """Fit the configured architecture; returns ``(model, RunHistory)``.

    One Adam step per epoch over the full batch, learning rate from the
    schedule, L2 and dropout per the config groups.  When
    ``include_ic_pair`` is set a zero-signal/zero-response pair is
    appended to the training data (its weighted-loss weight is 1).  The
    best-test parameter snapshot is kept on the history; the returned
    model carries the final parameters.
    """
    u_train = train_ds.input_matrix()
    x_train = train_ds.output_matrix()
    u_test = test_ds.input_matrix()
    x_test = test_ds.output_matrix()
    dt = train_ds.dt
    if train_ds.m != test_ds.m or train_ds.dt != test_ds.dt:
        raise ValueError("train and test sets must share the sampling grid")

    norm = None
    if config.normalization == "gaussian":
        u_train, x_train, norm = gaussian_normalize(u_train, x_train)
        u_test_fit = normalize_inputs(u_test, norm)
    else:
        u_test_fit = u_test

    ic_rows = ()
    if config.include_ic_pair:
        m = u_train.shape[1]
        u_train = np.vstack([u_train, np.zeros((1, m))])
        x_train = np.vstack([x_train, np.zeros((1, m))])
        ic_rows = (len(x_train) - 1,)

    rng = np.random.default_rng(config.seed)
    model, trainer, bias_param = _build_model_and_trainer(config, u_train, x_train, dt, rng)
    if hasattr(trainer, "prepare_eval"):
        trainer.prepare_eval(u_test_fit)

    if config.loss == "weighted_mse":
        weights = _weighted_row_weights(x_train, ic_rows)
    else:
        weights = np.ones(len(x_train))
    n_rows, m_cols = x_train.shape
    scale = 1.0 / (n_rows * m_cols)

    def dpred_fn(pred):
        diff = pred - x_train
        loss = float((weights * (diff**2).mean(axis=1)).mean())
        return 2.0 * scale * weights[:, None] * diff, loss

    params = trainer.params()
    state = adam_init(params)
    decay = trainer.weight_decay()

    metric_rows = (x_train**2).sum(axis=1) > 0.0
    x_train_metric = x_train[metric_rows]
    if norm is not None:
        x_train_metric = denormalize_outputs(x_train_metric, norm)

    epochs = config.epochs
    hist_lr = np.empty(epochs)
    hist_loss = np.empty(epochs)
    hist_train = np.empty(epochs)
    hist_test = np.empty(epochs)
    best_test = np.inf
    best_epoch = -1
    best_state = None
    started = time.perf_counter()
    for epoch in range(epochs):
        lr = lr_at(config.schedule, epoch)
        pred, loss, grads = trainer.forward_backward(dpred_fn, rng)
        if not np.isfinite(loss):
            raise DivergenceError(f"divergence at epoch {epoch}")
        adam_step(state, params, grads, lr, decay)
        pred_metric = pred[metric_rows]
        test_pred = trainer.predict(u_test_fit)
        if norm is not None:
            pred_metric = denormalize_outputs(pred_metric, norm)
            test_pred = denormalize_outputs(test_pred, norm)
        hist_lr[epoch] = lr
        hist_loss[epoch] = loss
        hist_train[epoch] = rel_l2(pred_metric, x_train_metric)
        hist_test[epoch] = rel_l2(test_pred, x_test)
        if hist_test[epoch] < best_test:
            best_test = hist_test[epoch]
            best_epoch = epoch
            best_state = _snapshot(trainer)
    wall = time.perf_counter() - started

    if bias_param is not None:
        _sync_bias(model, bias_param)
    final_pred = trainer.predict(u_test_fit)
    if norm is not None:
        final_pred = denormalize_outputs(final_pred, norm)
    final_err = np.array([rel_err(p, t) for p, t in zip(final_pred, x_test)])

    best_model = None
    if best_state is not None:
        final_state = _snapshot(trainer)
        _restore(trainer, best_state)
        best_model = _copy_model(model)
        if bias_param is not None:
            _sync_bias(best_model, bias_param)
        _restore(trainer, final_state)

    history = RunHistory(
        epoch=np.arange(epochs),
        lr=hist_lr,
        loss=hist_loss,
        train_rel_l2=hist_train,
        test_rel_l2=hist_test,
        final_test_rel_err=final_err,
        wall_clock=wall,
        best_epoch=best_epoch,
        best_test_rel_l2=float(best_test),
        best_model=best_model,
        norm=norm,
    )
    return model, history


def _sync_bias(model, bias_param):
    model.output_bias = float(bias_param[0])


def _copy_model(model):
    if isinstance(model, CausalityModel):
        return CausalityModel(
            branch=model.branch.copy(), trunk=model.trunk.copy(), dt=model.dt,
            m=model.m, convolutional=model.convolutional, output_bias=model.output_bias,
        )
    if isinstance(model, PodDeepOnetModel):
        return PodDeepOnetModel(branch=model.branch.copy(), basis=model.basis.copy(), mean=model.mean.copy())
    if isinstance(model, MsDeepOnetModel):
        trunk = MsTrunk(
            subnets=[s.copy() for s in model.trunk.subnets],
            scales=model.trunk.scales.copy(),
            combo_weights=model.trunk.combo_weights.copy(),
        )
        return MsDeepOnetModel(branch=model.branch.copy(), trunk=trunk, output_bias=model.output_bias)
    return DeepOnetModel(branch=model.branch.copy(), trunk=model.trunk.copy(), output_bias=model.output_bias)


# ---------------------------------------------------------------------------
# evaluation-mode prediction for stored models


def predict(model, inputs: np.ndarray, dt: float) -> np.ndarray:
    """Eval-mode trajectory predictions for a batch of input signals."""
    u = np.asarray(inputs, dtype=float)
    if isinstance(model, CausalityModel):
        t = mlp_forward(model.trunk, (np.arange(1, model.m + 1) * model.dt)[:, None])
        out = np.empty((len(u), model.m))
        for i, row in enumerate(u):
            windows = np.ascontiguousarray(window_matrix(row, model.convolutional))
            b = mlp_forward(model.branch, windows)
            out[i] = np.einsum("pk,pk->p", b, t)
        return out + model.output_bias
    if isinstance(model, PodDeepOnetModel):
        coef = mlp_forward(model.branch, u)
        return coef @ model.basis + model.mean
    if isinstance(model, MsDeepOnetModel):
        m = u.shape[1]
        t_unit = (np.arange(m) / max(m - 1, 1))[:, None]
        trunk = model.trunk
        t = sum(
            w * mlp_forward(net, scale * t_unit)
            for net, scale, w in zip(trunk.subnets, trunk.scales, trunk.combo_weights)
        )
        return mlp_forward(model.branch, u) @ t.T + model.output_bias
    if isinstance(model, DeepOnetModel):
        m = u.shape[1]
        t = mlp_forward(model.trunk, (np.arange(m) * dt)[:, None])
        return mlp_forward(model.branch, u) @ t.T + model.output_bias
    raise TypeError(f"cannot predict with {type(model).__name__}")


# ---------------------------------------------------------------------------
# evaluation reports


@dataclass
class EvalReport:
    rel_l2: np.ndarray
    rel_err: np.ndarray
    best_id: int
    worst_id: int
    predictions: np.ndarray
    truths: np.ndarray
    inputs: np.ndarray
    dt: float


def evaluate(model, dataset, norm: NormStats | None = None) -> EvalReport:
    """Per-sample errors plus best/worst identification on one dataset."""
    u = dataset.input_matrix()
    x = dataset.output_matrix()
    u_fit = normalize_inputs(u, norm) if norm is not None else u
    pred = predict(model, u_fit, dataset.dt)
    if norm is not None:
        pred = denormalize_outputs(pred, norm)
    row_l2 = rel_l2_rows(pred, x)
    row_err = np.array([rel_err(p, t) for p, t in zip(pred, x)])
    return EvalReport(
        rel_l2=row_l2,
        rel_err=row_err,
        best_id=int(np.argmin(row_l2)),
        worst_id=int(np.argmax(row_l2)),
        predictions=pred,
        truths=x,
        inputs=u,
        dt=dataset.dt,
    )


def write_report(report: EvalReport, directory) -> None:
    """report.csv plus trajectory and spectrum dumps for the flagged samples."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "report.csv"), "w") as fh:
        fh.write("id,rel_l2,rel_err,tag\n")
        for i, (l2v, errv) in enumerate(zip(report.rel_l2, report.rel_err)):
            tag = "best" if i == report.best_id else ("worst" if i == report.worst_id else "")
            fh.write(f"{i},{l2v:.17g},{errv:.17g},{tag}\n")
    t = np.arange(report.predictions.shape[1]) * report.dt
    for sample_id in {report.best_id, report.worst_id}:
        truth = report.truths[sample_id]
        pred = report.predictions[sample_id]
        with open(os.path.join(directory, f"pred_{sample_id}.csv"), "w") as fh:
            fh.write("t,truth,pred\n")
            for row in zip(t, truth, pred):
                fh.write("%.17g,%.17g,%.17g\n" % row)
        freqs, truth_amp = amplitude_spectrum(truth, report.dt)
        _, pred_amp = amplitude_spectrum(pred, report.dt)
        with open(os.path.join(directory, f"spectrum_{sample_id}.csv"), "w") as fh:
            fh.write("freq,truth_amp,pred_amp\n")
            for row in zip(freqs, truth_amp, pred_amp):
                fh.write("%.17g,%.17g,%.17g\n" % row)
