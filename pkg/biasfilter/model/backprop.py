# coding: utf-8
r"""
Backward pass of the biasing decoder.

Consumes the cache of :func:`biasfilter.model.bias_scorer.forward` and the gradient of a loss
with respect to the output log-probabilities, and returns the gradient of every parameter block.
"""
import math

import numpy as np

from biasfilter.errors import NumericalError
from biasfilter.model.bias_scorer import GELU_C, merge_heads, split_heads


def _flat(x):
    return x.reshape(-1, x.shape[-1])


def layer_norm_backward(dy, gain, cache):
    xhat, rstd = cache
    n = xhat.shape[-1]
    dgain = _flat(dy * xhat).sum(axis=0)
    dbias = _flat(dy).sum(axis=0)
    dxhat = dy * gain
    dx = (rstd / n) * (
        n * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


def gelu_backward(dy, x, tanh_term):
    inner = GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
    return dy * (0.5 * (1.0 + tanh_term) + 0.5 * x * (1.0 - tanh_term ** 2) * inner)


def attention_backward(dout, wq, wk, wv, wo, cache, n_heads):
    r"""
    Backward pass of :func:`biasfilter.model.bias_scorer.attention`.

    Returns
    -------
    dqueries_in, dkeys_in : np.ndarray
    dwq, dwk, dwv, dwo : np.ndarray
    """
    probs, q, k, v = cache["probs"], cache["q"], cache["k"], cache["v"]

    dwo = _flat(cache["context"]).T @ _flat(dout)
    dcontext = split_heads(dout @ wo.T, n_heads)

    dprobs = dcontext @ v.transpose(0, 1, 3, 2)
    dv = probs.transpose(0, 1, 3, 2) @ dcontext
    dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
    dscores = dscores * cache["scale"]
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q

    # keys broadcast over the batch (cross-attention memory)
    if k.shape[0] != q.shape[0]:
        dk = dk.sum(axis=0, keepdims=True)
        dv = dv.sum(axis=0, keepdims=True)

    dq, dk, dv = merge_heads(dq), merge_heads(dk), merge_heads(dv)
    queries_in, keys_in = cache["queries_in"], cache["keys_in"]
    dwq = _flat(queries_in).T @ _flat(dq)
    dwk = _flat(keys_in).T @ _flat(dk)
    dwv = _flat(keys_in).T @ _flat(dv)
    dqueries_in = dq @ wq.T
    dkeys_in = dk @ wk.T + dv @ wv.T
    return dqueries_in, dkeys_in, dwq, dwk, dwv, dwo


def backward(params, cache, dlog_probs):
    r"""
    Computes parameter gradients.

    Parameters
    ----------
    params : DecoderParams
        Parameters used in the forward pass
    cache : dict
        Cache returned by forward(..., keep_cache=True)
    dlog_probs : np.ndarray
        (B, L, V) gradient of the loss with respect to the log-probabilities

    Returns
    -------
    grads : OrderedDict
        One array per parameter block, shaped like the block
    """
    cfg = params.config
    grads = params.zeros_like()

    probs = cache["probs"]
    dlogits = dlog_probs - probs * dlog_probs.sum(axis=-1, keepdims=True)
    grads["out.w"] = _flat(cache["final_out"]).T @ _flat(dlogits)
    grads["out.b"] = _flat(dlogits).sum(axis=0)
    dz = dlogits @ params["out.w"].T
    dh, grads["final_ln.g"], grads["final_ln.b"] = layer_norm_backward(
        dz, params["final_ln.g"], cache["final_ln"]
    )

    for i in reversed(range(cfg.n_layers)):
        p = f"layers.{i}."
        layer = cache["layers"][i]

        grads[p + "ff.w2"] = _flat(layer["ff_act"]).T @ _flat(dh)
        grads[p + "ff.b2"] = _flat(dh).sum(axis=0)
        dpre = gelu_backward(dh @ params[p + "ff.w2"].T, layer["ff_pre"], layer["ff_tanh"])
        grads[p + "ff.w1"] = _flat(layer["ff_in"]).T @ _flat(dpre)
        grads[p + "ff.b1"] = _flat(dpre).sum(axis=0)
        dx, grads[p + "ln3.g"], grads[p + "ln3.b"] = layer_norm_backward(
            dpre @ params[p + "ff.w1"].T, params[p + "ln3.g"], layer["ln3"]
        )
        dh = dh + dx

        dquery, _, dwq, dwk, dwv, dwo = attention_backward(
            dh,
            params[p + "cross.wq"],
            params[p + "cross.wk"],
            params[p + "cross.wv"],
            params[p + "cross.wo"],
            layer["cross"],
            cfg.n_heads,
        )
        grads[p + "cross.wq"], grads[p + "cross.wk"] = dwq, dwk
        grads[p + "cross.wv"], grads[p + "cross.wo"] = dwv, dwo
        dx, grads[p + "ln2.g"], grads[p + "ln2.b"] = layer_norm_backward(
            dquery, params[p + "ln2.g"], layer["ln2"]
        )
        dh = dh + dx

        dquery, dkey, dwq, dwk, dwv, dwo = attention_backward(
            dh,
            params[p + "self.wq"],
            params[p + "self.wk"],
            params[p + "self.wv"],
            params[p + "self.wo"],
            layer["self"],
            cfg.n_heads,
        )
        grads[p + "self.wq"], grads[p + "self.wk"] = dwq, dwk
        grads[p + "self.wv"], grads[p + "self.wo"] = dwv, dwo
        dx, grads[p + "ln1.g"], grads[p + "ln1.b"] = layer_norm_backward(
            dquery + dkey, params[p + "ln1.g"], layer["ln1"]
        )
        dh = dh + dx

    np.add.at(grads["embed"], cache["inputs"], dh * math.sqrt(cfg.d_model))

    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NumericalError(name, f"Non-finite gradient in block '{name}'.")
    return grads
