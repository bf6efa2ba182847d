"""Pure-numpy kernel implementations.

The GRU scan here is the fallback for the compiled extension; the convolution
kernels are GEMM-bound and shared by both backends. Cache layout for the GRU
is one array [S, R, 4H] holding the blocks reset | update | candidate |
recurrent-candidate-preactivation, which the backward pass consumes.
"""

from __future__ import annotations

import numpy as np


def gru_forward(xp, wh, bh, h0):
    """Scan a GRU over preprojected inputs xp [S, R, 3H].

    Returns (h_all [S+1, R, H] with h_all[0] = h0, cache [S, R, 4H]).
    The loop reuses preallocated buffers; numpy's vectorized exp/tanh carry
    the transcendental load.
    """
    S, R, H3 = xp.shape
    H = H3 // 3
    h_all = np.empty((S + 1, R, H))
    h_all[0] = h0
    cache = np.empty((S, R, 4 * H))
    hp = np.empty((R, 3 * H))
    rz = np.empty((R, 2 * H))
    npre = np.empty((R, H))
    t1 = np.empty((R, H))
    for t in range(S):
        np.matmul(h_all[t], wh, out=hp)
        hp += bh
        ct = cache[t]
        hl = ct[:, 3 * H:]
        np.copyto(hl, hp[:, 2 * H:])
        # r and z gates share one exp pass
        np.add(xp[t, :, :2 * H], hp[:, :2 * H], out=rz)
        np.negative(rz, out=rz)
        np.exp(rz, out=rz)
        rz += 1.0
        np.reciprocal(rz, out=ct[:, :2 * H])
        r = ct[:, :H]
        z = ct[:, H:2 * H]
        # candidate
        np.multiply(r, hl, out=npre)
        npre += xp[t, :, 2 * H:]
        n = ct[:, 2 * H:3 * H]
        np.tanh(npre, out=n)
        # h = (1 - z) * n + z * h_prev
        h_next = h_all[t + 1]
        np.multiply(z, h_all[t], out=t1)
        np.multiply(z, n, out=npre)
        np.subtract(n, npre, out=h_next)
        h_next += t1
    return h_all, cache


def gru_backward(dh_out, h_all, cache, wh):
    """Adjoint of gru_forward. Returns (dxp, dwh, dbh, dh0)."""
    S, R, H = dh_out.shape
    dxp = np.empty((S, R, 3 * H))
    dwh = np.zeros_like(wh)
    dbh = np.zeros(3 * H)
    carry = np.zeros((R, H))
    dpre = np.empty((R, 3 * H))
    dh = np.empty((R, H))
    gemm_buf = np.empty_like(wh)
    for t in range(S - 1, -1, -1):
        r = cache[t, :, :H]
        z = cache[t, :, H:2 * H]
        n = cache[t, :, 2 * H:3 * H]
        hl = cache[t, :, 3 * H:]
        hprev = h_all[t]
        np.add(dh_out[t], carry, out=dh)
        dn_pre = dh * (1.0 - z) * (1.0 - n * n)
        dr_pre = dpre[:, :H]
        dz_pre = dpre[:, H:2 * H]
        dhl = dpre[:, 2 * H:]
        np.multiply(dh * (hprev - n), z * (1.0 - z), out=dz_pre)
        np.multiply(dn_pre, r, out=dhl)
        np.multiply(dn_pre * hl, r * (1.0 - r), out=dr_pre)
        dxp[t, :, :2 * H] = dpre[:, :2 * H]
        dxp[t, :, 2 * H:] = dn_pre
        np.matmul(hprev.T, dpre, out=gemm_buf)
        dwh += gemm_buf
        dbh += dpre.sum(axis=0)
        np.multiply(dh, z, out=carry)
        carry += dpre @ wh.T
    return dxp, dwh, dbh, carry


def conv1d_forward(x, w, b, stride, padding):
    """x [B,Cin,T], w [Cout,Cin,K] -> (out [B,Cout,oT], im2col cache)."""
    B, Cin, T = x.shape
    Cout, _, K = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding))) if padding else x
    Tp = T + 2 * padding
    if Tp < K:
        raise ValueError(f"conv1d input too short: padded length {Tp} < kernel {K}")
    oT = (Tp - K) // stride + 1
    cols = np.empty((B, Cin, K, oT))
    span = (oT - 1) * stride + 1
    for k in range(K):
        cols[:, :, k, :] = xp[:, :, k:k + span:stride]
    cols2 = cols.reshape(B, Cin * K, oT)
    out = np.matmul(w.reshape(Cout, Cin * K), cols2)
    out += b[None, :, None]
    return out, cols2


def conv1d_backward(g, x, w, cols2, stride, padding):
    B, Cin, T = x.shape
    Cout, _, K = w.shape
    oT = g.shape[2]
    # dw = sum_b g_b @ cols2_b^T, flattened over (batch, time) for one GEMM
    g_flat = np.ascontiguousarray(g.transpose(1, 0, 2)).reshape(Cout, B * oT)
    c_flat = np.ascontiguousarray(cols2.transpose(1, 0, 2)).reshape(Cin * K, B * oT)
    dw = (g_flat @ c_flat.T).reshape(w.shape)
    db = g.sum(axis=(0, 2))
    dcols = np.matmul(w.reshape(Cout, Cin * K).T, g).reshape(B, Cin, K, oT)
    dxp = np.zeros((B, Cin, T + 2 * padding))
    span = (oT - 1) * stride + 1
    for k in range(K):
        dxp[:, :, k:k + span:stride] += dcols[:, :, k, :]
    dx = dxp[:, :, padding:padding + T] if padding else dxp
    return dx, dw, db


def conv_transpose1d_forward(x, w, b, stride, padding):
    """x [B,Cin,T], w [Cin,Cout,K] -> out [B,Cout,(T-1)*stride+K-2*padding]."""
    B, Cin, T = x.shape
    _, Cout, K = w.shape
    prod = np.matmul(x.transpose(0, 2, 1), w.reshape(Cin, Cout * K))
    prod = np.ascontiguousarray(prod.reshape(B, T, Cout, K).transpose(0, 2, 3, 1))
    full_T = (T - 1) * stride + K
    full = np.zeros((B, Cout, full_T))
    span = (T - 1) * stride + 1
    for k in range(K):
        full[:, :, k:k + span:stride] += prod[:, :, k, :]
    out = full[:, :, padding:full_T - padding] if padding else full
    if out.shape[2] < 1:
        raise ValueError("conv_transpose1d output length < 1")
    return out + b[None, :, None]


def conv_transpose1d_backward(g, x, w, stride, padding):
    B, Cin, T = x.shape
    _, Cout, K = w.shape
    gf = np.pad(g, ((0, 0), (0, 0), (padding, padding))) if padding else g
    span = (T - 1) * stride + 1
    dprod = np.empty((B, Cout, K, T))
    for k in range(K):
        dprod[:, :, k, :] = gf[:, :, k:k + span:stride]
    db = g.sum(axis=(0, 2))
    dprod_flat = dprod.reshape(B, Cout * K, T)
    x_flat = np.ascontiguousarray(x.transpose(1, 0, 2)).reshape(Cin, B * T)
    p_flat = np.ascontiguousarray(dprod_flat.transpose(1, 0, 2)).reshape(Cout * K, B * T)
    dw = (x_flat @ p_flat.T).reshape(w.shape)
    dx = np.matmul(w.reshape(Cin, Cout * K), dprod_flat)
    return dx, dw, db
