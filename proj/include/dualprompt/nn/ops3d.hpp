#pragma once

#include <cstring>
#include <memory>

#include "dualprompt/nn/tape.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dualprompt::nn {

// Zero-pad a [D,H,W] channel by one voxel on every side into a
// [(D+2),(H+2),(W+2)] buffer. The caller zero-fills dst once.
template <class S>
inline void pad1_channel(const S* src, int dd, int hh, int ww, S* dst) {
    const int pw = ww + 2, ph = hh + 2;
    for (int z = 0; z < dd; ++z)
        for (int y = 0; y < hh; ++y)
            std::memcpy(dst + (size_t(z + 1) * ph + (y + 1)) * pw + 1,
                        src + (size_t(z) * hh + y) * ww, sizeof(S) * ww);
}

// 3x3x3 convolution, stride 1, zero padding 1.
// x: [Cin,D,H,W]; w: vec of Cout*Cin*27 (out, in, kz, ky, kx);
// b: vec of Cout or kNone. Inner loops are contiguous row saxpys over a
// padded copy of the input, which is what makes direct convolution fast
// enough here without an im2col buffer.
template <class S>
typename Tape<S>::Id conv3x3(Tape<S>& t, typename Tape<S>::Id x,
                             typename Tape<S>::Id w, typename Tape<S>::Id b, int cout) {
    using Id = typename Tape<S>::Id;
    const Shape xs = t.shape(x);
    if (xs.rank != 4) throw std::invalid_argument("conv3x3: input must be a feature map");
    const int cin = xs.d[0], dd = xs.d[1], hh = xs.d[2], ww = xs.d[3];
    if (static_cast<int64_t>(t.val(w).size()) != int64_t(cout) * cin * 27)
        throw std::invalid_argument("conv3x3: weight size mismatch");
    const bool rg = t.node(x).rg || t.node(w).rg || (b != Tape<S>::kNone && t.node(b).rg);
    Id y = t.alloc(Shape::fmap(cout, dd, hh, ww), rg);

    const int pw = ww + 2, ph = hh + 2, pd = dd + 2;
    const size_t pch = size_t(pd) * ph * pw;
    std::vector<S> padded(size_t(cin) * pch, S(0));
    {
        const S* xv = t.val(x).data();
        for (int c = 0; c < cin; ++c)
            pad1_channel(xv + size_t(c) * dd * hh * ww, dd, hh, ww, padded.data() + c * pch);
    }

    const S* wv = t.val(w).data();
    const S* bv = b != Tape<S>::kNone ? t.val(b).data() : nullptr;
    S* yv = t.mutable_node(y).v.data();
    const size_t och = size_t(dd) * hh * ww;

    // One pass per output row: taps and input channels accumulate while the
    // row sits in L1, instead of 27 full-volume sweeps.
#pragma omp parallel for schedule(static)
    for (int co = 0; co < cout; ++co) {
        S* out = yv + co * och;
        const S bias = bv ? bv[co] : S(0);
        const S* wbase = wv + size_t(co) * cin * 27;
        for (int z = 0; z < dd; ++z)
            for (int yy = 0; yy < hh; ++yy) {
                S* __restrict dst = out + (size_t(z) * hh + yy) * ww;
                for (int xx = 0; xx < ww; ++xx) dst[xx] = bias;
                for (int ci = 0; ci < cin; ++ci) {
                    const S* pc = padded.data() + ci * pch;
                    const S* wk = wbase + size_t(ci) * 27;
                    for (int kz = 0; kz < 3; ++kz)
                        for (int ky = 0; ky < 3; ++ky) {
                            const S* __restrict src = pc + (size_t(z + kz) * ph + (yy + ky)) * pw;
                            const S w0 = wk[(kz * 3 + ky) * 3];
                            const S w1 = wk[(kz * 3 + ky) * 3 + 1];
                            const S w2 = wk[(kz * 3 + ky) * 3 + 2];
                            for (int xx = 0; xx < ww; ++xx)
                                dst[xx] += w0 * src[xx] + w1 * src[xx + 1] + w2 * src[xx + 2];
                        }
                }
            }
    }

    if (rg)
        t.push_backward([&t, x, w, b, y, cout, cin, dd, hh, ww] {
            const int pw = ww + 2, ph = hh + 2, pd = dd + 2;
            const size_t pch = size_t(pd) * ph * pw;
            const size_t och = size_t(dd) * hh * ww;
            const S* yg = t.grad(y).data();
            const S* wv = t.val(w).data();

            if (t.node(x).rg) {
                // dX is a correlation of dY (padded) with the flipped kernel.
                std::vector<S> gpad(size_t(cout) * pch, S(0));
                for (int co = 0; co < cout; ++co)
                    pad1_channel(yg + co * och, dd, hh, ww, gpad.data() + co * pch);
                S* xg = t.mutable_node(x).g.data();
#pragma omp parallel for schedule(static)
                for (int ci = 0; ci < cin; ++ci) {
                    S* gin = xg + ci * och;
                    for (int z = 0; z < dd; ++z)
                        for (int yy = 0; yy < hh; ++yy) {
                            S* __restrict dst = gin + (size_t(z) * hh + yy) * ww;
                            for (int co = 0; co < cout; ++co) {
                                const S* pc = gpad.data() + co * pch;
                                const S* wk = wv + (size_t(co) * cin + ci) * 27;
                                for (int kz = 0; kz < 3; ++kz)
                                    for (int ky = 0; ky < 3; ++ky) {
                                        const S* __restrict src =
                                            pc + (size_t(z + 2 - kz) * ph + (yy + 2 - ky)) * pw;
                                        const S w0 = wk[(kz * 3 + ky) * 3];
                                        const S w1 = wk[(kz * 3 + ky) * 3 + 1];
                                        const S w2 = wk[(kz * 3 + ky) * 3 + 2];
                                        for (int xx = 0; xx < ww; ++xx)
                                            dst[xx] += w0 * src[xx + 2] + w1 * src[xx + 1] + w2 * src[xx];
                                    }
                            }
                        }
                }
            }
            if (t.node(w).rg) {
                std::vector<S> padded(size_t(cin) * pch, S(0));
                const S* xv = t.val(x).data();
                for (int c = 0; c < cin; ++c)
                    pad1_channel(xv + size_t(c) * dd * hh * ww, dd, hh, ww, padded.data() + c * pch);
                S* wg = t.mutable_node(w).g.data();
                const int pairs = cout * cin;
#pragma omp parallel for schedule(static)
                for (int p = 0; p < pairs; ++p) {
                    const int co = p / cin, ci = p % cin;
                    const S* gout = yg + co * och;
                    const S* pc = padded.data() + ci * pch;
                    S* wk = wg + size_t(p) * 27;
                    S acc[27] = {};
                    for (int z = 0; z < dd; ++z)
                        for (int yy = 0; yy < hh; ++yy) {
                            const S* __restrict go = gout + (size_t(z) * hh + yy) * ww;
                            for (int kz = 0; kz < 3; ++kz)
                                for (int ky = 0; ky < 3; ++ky) {
                                    const S* __restrict src =
                                        pc + (size_t(z + kz) * ph + (yy + ky)) * pw;
                                    S a0 = S(0), a1 = S(0), a2 = S(0);
                                    for (int xx = 0; xx < ww; ++xx) {
                                        a0 += go[xx] * src[xx];
                                        a1 += go[xx] * src[xx + 1];
                                        a2 += go[xx] * src[xx + 2];
                                    }
                                    acc[(kz * 3 + ky) * 3] += a0;
                                    acc[(kz * 3 + ky) * 3 + 1] += a1;
                                    acc[(kz * 3 + ky) * 3 + 2] += a2;
                                }
                        }
                    for (int k = 0; k < 27; ++k) wk[k] += acc[k];
                }
            }
            if (b != Tape<S>::kNone && t.node(b).rg) {
                S* bg = t.mutable_node(b).g.data();
                for (int co = 0; co < cout; ++co) {
                    S acc = S(0);
                    const S* gout = yg + co * och;
                    for (size_t i = 0; i < och; ++i) acc += gout[i];
                    bg[co] += acc;
                }
            }
        });
    return y;
}

// 2x2x2 convolution with stride 2 (halves each spatial dim, which must be
// even). w: vec of Cout*Cin*8; b: vec of Cout or kNone. Since kernel equals
// stride, every input voxel feeds exactly one output voxel, which keeps the
// backward pass gather-only.
template <class S>
typename Tape<S>::Id conv_down2(Tape<S>& t, typename Tape<S>::Id x,
                                typename Tape<S>::Id w, typename Tape<S>::Id b, int cout) {
    using Id = typename Tape<S>::Id;
    const Shape xs = t.shape(x);
    const int cin = xs.d[0], dd = xs.d[1], hh = xs.d[2], ww = xs.d[3];
    if (dd % 2 || hh % 2 || ww % 2)
        throw std::invalid_argument("conv_down2: spatial dims must be even");
    if (static_cast<int64_t>(t.val(w).size()) != int64_t(cout) * cin * 8)
        throw std::invalid_argument("conv_down2: weight size mismatch");
    const int od = dd / 2, oh = hh / 2, ow = ww / 2;
    const bool rg = t.node(x).rg || t.node(w).rg || (b != Tape<S>::kNone && t.node(b).rg);
    Id y = t.alloc(Shape::fmap(cout, od, oh, ow), rg);

    const S* xv = t.val(x).data();
    const S* wv = t.val(w).data();
    const S* bv = b != Tape<S>::kNone ? t.val(b).data() : nullptr;
    S* yv = t.mutable_node(y).v.data();
    const size_t ich = size_t(dd) * hh * ww, och = size_t(od) * oh * ow;

#pragma omp parallel for schedule(static)
    for (int co = 0; co < cout; ++co) {
        S* out = yv + co * och;
        const S bias = bv ? bv[co] : S(0);
        for (size_t i = 0; i < och; ++i) out[i] = bias;
        for (int ci = 0; ci < cin; ++ci) {
            const S* in = xv + ci * ich;
            const S* wk = wv + (size_t(co) * cin + ci) * 8;
            for (int z = 0; z < od; ++z)
                for (int yy = 0; yy < oh; ++yy)
                    for (int xx = 0; xx < ow; ++xx) {
                        S acc = S(0);
                        for (int kz = 0; kz < 2; ++kz)
                            for (int ky = 0; ky < 2; ++ky)
                                for (int kx = 0; kx < 2; ++kx)
                                    acc += wk[(kz * 2 + ky) * 2 + kx] *
                                           in[(size_t(2 * z + kz) * hh + (2 * yy + ky)) * ww + (2 * xx + kx)];
                        out[(size_t(z) * oh + yy) * ow + xx] += acc;
                    }
        }
    }

    if (rg)
        t.push_backward([&t, x, w, b, y, cout, cin, dd, hh, ww, od, oh, ow] {
            const size_t ich = size_t(dd) * hh * ww, och = size_t(od) * oh * ow;
            const S* yg = t.grad(y).data();
            const S* wv = t.val(w).data();
            const S* xv = t.val(x).data();
            if (t.node(x).rg) {
                S* xg = t.mutable_node(x).g.data();
#pragma omp parallel for schedule(static)
                for (int ci = 0; ci < cin; ++ci) {
                    S* gin = xg + ci * ich;
                    for (int z = 0; z < dd; ++z)
                        for (int yy = 0; yy < hh; ++yy)
                            for (int xx = 0; xx < ww; ++xx) {
                                const int tap = ((z % 2) * 2 + (yy % 2)) * 2 + (xx % 2);
                                const size_t op = (size_t(z / 2) * oh + (yy / 2)) * ow + (xx / 2);
                                S acc = S(0);
                                for (int co = 0; co < cout; ++co)
                                    acc += wv[(size_t(co) * cin + ci) * 8 + tap] * yg[co * och + op];
                                gin[(size_t(z) * hh + yy) * ww + xx] += acc;
                            }
                }
            }
            if (t.node(w).rg) {
                S* wg = t.mutable_node(w).g.data();
                const int pairs = cout * cin;
#pragma omp parallel for schedule(static)
                for (int p = 0; p < pairs; ++p) {
                    const int co = p / cin, ci = p % cin;
                    const S* gout = yg + co * och;
                    const S* in = xv + ci * ich;
                    for (int kz = 0; kz < 2; ++kz)
                        for (int ky = 0; ky < 2; ++ky)
                            for (int kx = 0; kx < 2; ++kx) {
                                S acc = S(0);
                                for (int z = 0; z < od; ++z)
                                    for (int yy = 0; yy < oh; ++yy)
                                        for (int xx = 0; xx < ow; ++xx)
                                            acc += gout[(size_t(z) * oh + yy) * ow + xx] *
                                                   in[(size_t(2 * z + kz) * hh + (2 * yy + ky)) * ww + (2 * xx + kx)];
                                wg[size_t(p) * 8 + (kz * 2 + ky) * 2 + kx] += acc;
                            }
                }
            }
            if (b != Tape<S>::kNone && t.node(b).rg) {
                S* bg = t.mutable_node(b).g.data();
                for (int co = 0; co < cout; ++co) {
                    S acc = S(0);
                    for (size_t i = 0; i < och; ++i) acc += yg[co * och + i];
                    bg[co] += acc;
                }
            }
        });
    return y;
}

// 1x1x1 convolution whose weights are tape nodes, so gradients flow into the
// network that generated them. w: vec of Cout*Cin; b: vec of Cout.
template <class S>
typename Tape<S>::Id conv1x1(Tape<S>& t, typename Tape<S>::Id x,
                             typename Tape<S>::Id w, typename Tape<S>::Id b, int cout) {
    using Id = typename Tape<S>::Id;
    const Shape xs = t.shape(x);
    const int cin = xs.d[0];
    const size_t sp = static_cast<size_t>(xs.spatial());
    if (static_cast<int>(t.val(w).size()) != cout * cin)
        throw std::invalid_argument("conv1x1: weight size mismatch");
    if (b != Tape<S>::kNone && static_cast<int>(t.val(b).size()) != cout)
        throw std::invalid_argument("conv1x1: bias size mismatch");
    const bool rg = t.node(x).rg || t.node(w).rg || (b != Tape<S>::kNone && t.node(b).rg);
    Id y = t.alloc(Shape::fmap(cout, xs.d[1], xs.d[2], xs.d[3]), rg);

    const S* xv = t.val(x).data();
    const S* wv = t.val(w).data();
    const S* bv = b != Tape<S>::kNone ? t.val(b).data() : nullptr;
    S* yv = t.mutable_node(y).v.data();
#pragma omp parallel for schedule(static)
    for (int co = 0; co < cout; ++co) {
        S* out = yv + co * sp;
        const S bias = bv ? bv[co] : S(0);
        for (size_t i = 0; i < sp; ++i) out[i] = bias;
        for (int ci = 0; ci < cin; ++ci) {
            const S wt = wv[size_t(co) * cin + ci];
            const S* in = xv + ci * sp;
            for (size_t i = 0; i < sp; ++i) out[i] += wt * in[i];
        }
    }

    if (rg)
        t.push_backward([&t, x, w, b, y, cout, cin, sp] {
            const S* yg = t.grad(y).data();
            const S* wv = t.val(w).data();
            const S* xv = t.val(x).data();
            if (t.node(x).rg) {
                S* xg = t.mutable_node(x).g.data();
#pragma omp parallel for schedule(static)
                for (int ci = 0; ci < cin; ++ci) {
                    S* gin = xg + ci * sp;
                    for (int co = 0; co < cout; ++co) {
                        const S wt = wv[size_t(co) * cin + ci];
                        const S* go = yg + co * sp;
                        for (size_t i = 0; i < sp; ++i) gin[i] += wt * go[i];
                    }
                }
            }
            if (t.node(w).rg) {
                S* wg = t.mutable_node(w).g.data();
                for (int co = 0; co < cout; ++co)
                    for (int ci = 0; ci < cin; ++ci) {
                        const S* go = yg + co * sp;
                        const S* in = xv + ci * sp;
                        S acc = S(0);
                        for (size_t i = 0; i < sp; ++i) acc += go[i] * in[i];
                        wg[size_t(co) * cin + ci] += acc;
                    }
            }
            if (b != Tape<S>::kNone && t.node(b).rg) {
                S* bg = t.mutable_node(b).g.data();
                for (int co = 0; co < cout; ++co) {
                    S acc = S(0);
                    const S* go = yg + co * sp;
                    for (size_t i = 0; i < sp; ++i) acc += go[i];
                    bg[co] += acc;
                }
            }
        });
    return y;
}

// Group normalization over (channels-in-group x spatial), then per-channel
// affine. gamma/beta: vec of C. Statistics accumulate in double regardless
// of S so float runs stay stable on 32^3 groups.
template <class S>
typename Tape<S>::Id group_norm(Tape<S>& t, typename Tape<S>::Id x,
                                typename Tape<S>::Id gamma, typename Tape<S>::Id beta,
                                int groups, S eps = S(1e-5)) {
    using Id = typename Tape<S>::Id;
    const Shape xs = t.shape(x);
    const int c = xs.d[0];
    const size_t sp = static_cast<size_t>(xs.spatial());
    if (c % groups != 0) throw std::invalid_argument("group_norm: channels not divisible by groups");
    const int cpg = c / groups;
    const size_t gsz = size_t(cpg) * sp;
    const bool rg = t.node(x).rg || t.node(gamma).rg || t.node(beta).rg;
    Id y = t.alloc(xs, rg);

    auto stats = std::make_shared<std::vector<S>>(size_t(groups) * 2);
    const S* xv = t.val(x).data();
    const S* gv = t.val(gamma).data();
    const S* bv = t.val(beta).data();
    S* yv = t.mutable_node(y).v.data();
#pragma omp parallel for schedule(static)
    for (int g = 0; g < groups; ++g) {
        const S* in = xv + size_t(g) * gsz;
        double sum = 0.0, sq = 0.0;
        for (size_t i = 0; i < gsz; ++i) {
            sum += in[i];
            sq += double(in[i]) * in[i];
        }
        const double mu = sum / double(gsz);
        const double var = std::max(0.0, sq / double(gsz) - mu * mu);
        const S mean = S(mu);
        const S invstd = S(1.0 / std::sqrt(var + double(eps)));
        (*stats)[size_t(g) * 2] = mean;
        (*stats)[size_t(g) * 2 + 1] = invstd;
        for (int j = 0; j < cpg; ++j) {
            const int ch = g * cpg + j;
            const S* ic = xv + size_t(ch) * sp;
            S* oc = yv + size_t(ch) * sp;
            const S a = gv[ch] * invstd, o = bv[ch] - gv[ch] * mean * invstd;
            for (size_t i = 0; i < sp; ++i) oc[i] = a * ic[i] + o;
        }
    }

    if (rg)
        t.push_backward([&t, x, gamma, beta, y, groups, cpg, sp, gsz, stats] {
            const S* xv = t.val(x).data();
            const S* gv = t.val(gamma).data();
            const S* yg = t.grad(y).data();
            if (t.node(gamma).rg || t.node(beta).rg) {
                S* gg = t.node(gamma).rg ? t.mutable_node(gamma).g.data() : nullptr;
                S* bg = t.node(beta).rg ? t.mutable_node(beta).g.data() : nullptr;
                for (int g = 0; g < groups; ++g) {
                    const S mean = (*stats)[size_t(g) * 2], invstd = (*stats)[size_t(g) * 2 + 1];
                    for (int j = 0; j < cpg; ++j) {
                        const int ch = g * cpg + j;
                        const S* ic = xv + size_t(ch) * sp;
                        const S* go = yg + size_t(ch) * sp;
                        S dg = S(0), db = S(0);
                        for (size_t i = 0; i < sp; ++i) {
                            dg += go[i] * (ic[i] - mean) * invstd;
                            db += go[i];
                        }
                        if (gg) gg[ch] += dg;
                        if (bg) bg[ch] += db;
                    }
                }
            }
            if (t.node(x).rg) {
                S* xg = t.mutable_node(x).g.data();
#pragma omp parallel for schedule(static)
                for (int g = 0; g < groups; ++g) {
                    const S mean = (*stats)[size_t(g) * 2], invstd = (*stats)[size_t(g) * 2 + 1];
                    // dxhat = dy * gamma; dx = invstd * (dxhat - mean(dxhat)
                    //         - xhat * mean(dxhat * xhat))
                    double s1 = 0.0, s2 = 0.0;
                    for (int j = 0; j < cpg; ++j) {
                        const int ch = g * cpg + j;
                        const S* ic = xv + size_t(ch) * sp;
                        const S* go = yg + size_t(ch) * sp;
                        const S gm = gv[ch];
                        for (size_t i = 0; i < sp; ++i) {
                            const S dxh = go[i] * gm;
                            s1 += dxh;
                            s2 += double(dxh) * ((ic[i] - mean) * invstd);
                        }
                    }
                    const S m1 = S(s1 / double(gsz)), m2 = S(s2 / double(gsz));
                    for (int j = 0; j < cpg; ++j) {
                        const int ch = g * cpg + j;
                        const S* ic = xv + size_t(ch) * sp;
                        const S* go = yg + size_t(ch) * sp;
                        S* gx = xg + size_t(ch) * sp;
                        const S gm = gv[ch];
                        for (size_t i = 0; i < sp; ++i) {
                            const S xhat = (ic[i] - mean) * invstd;
                            gx[i] += invstd * (go[i] * gm - m1 - xhat * m2);
                        }
                    }
                }
            }
        });
    return y;
}

// Feature-wise modulation with per-channel scale and shift vectors.
// residual form:  y = x + (gamma_hat * x + beta)   (heads at zero => y == x)
// plain form:     y = gamma * x + beta
template <class S>
typename Tape<S>::Id film_modulate(Tape<S>& t, typename Tape<S>::Id x,
                                   typename Tape<S>::Id gam, typename Tape<S>::Id bet,
                                   bool residual) {
    using Id = typename Tape<S>::Id;
    const Shape xs = t.shape(x);
    const int c = xs.d[0];
    const size_t sp = static_cast<size_t>(xs.spatial());
    if (static_cast<int>(t.val(gam).size()) != c || static_cast<int>(t.val(bet).size()) != c)
        throw std::invalid_argument("film_modulate: scale/shift must have one entry per channel");
    const bool rg = t.node(x).rg || t.node(gam).rg || t.node(bet).rg;
    Id y = t.alloc(xs, rg);

    const S* xv = t.val(x).data();
    const S* gv = t.val(gam).data();
    const S* bv = t.val(bet).data();
    S* yv = t.mutable_node(y).v.data();
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c; ++ch) {
        const S g = gv[ch], b = bv[ch];
        const S* in = xv + size_t(ch) * sp;
        S* out = yv + size_t(ch) * sp;
        if (residual)
            for (size_t i = 0; i < sp; ++i) out[i] = in[i] + (g * in[i] + b);
        else
            for (size_t i = 0; i < sp; ++i) out[i] = g * in[i] + b;
    }

    if (rg)
        t.push_backward([&t, x, gam, bet, y, c, sp, residual] {
            const S* xv = t.val(x).data();
            const S* gv = t.val(gam).data();
            const S* yg = t.grad(y).data();
            for (int ch = 0; ch < c; ++ch) {
                const S* in = xv + size_t(ch) * sp;
                const S* go = yg + size_t(ch) * sp;
                if (t.node(gam).rg || t.node(bet).rg) {
                    S dg = S(0), db = S(0);
                    for (size_t i = 0; i < sp; ++i) {
                        dg += go[i] * in[i];
                        db += go[i];
                    }
                    if (t.node(gam).rg) t.mutable_node(gam).g[ch] += dg;
                    if (t.node(bet).rg) t.mutable_node(bet).g[ch] += db;
                }
                if (t.node(x).rg) {
                    S* gx = t.mutable_node(x).g.data() + size_t(ch) * sp;
                    const S slope = residual ? S(1) + gv[ch] : gv[ch];
                    for (size_t i = 0; i < sp; ++i) gx[i] += slope * go[i];
                }
            }
        });
    return y;
}

// Trilinear upsampling by exactly 2x along each axis (half-voxel aligned,
// edge clamped). Per-axis tap indices and weights are precomputed once.
template <class S>
typename Tape<S>::Id upsample_trilinear2(Tape<S>& t, typename Tape<S>::Id x) {
    using Id = typename Tape<S>::Id;
    const Shape xs = t.shape(x);
    const int c = xs.d[0], dd = xs.d[1], hh = xs.d[2], ww = xs.d[3];
    const int od = dd * 2, oh = hh * 2, ow = ww * 2;
    Id y = t.alloc(Shape::fmap(c, od, oh, ow), t.node(x).rg);

    struct AxisTap {
        std::vector<int> i0, i1;
        std::vector<S> w1;  // weight of i1; weight of i0 is 1 - w1
    };
    auto make_taps = [](int n) {
        AxisTap a;
        a.i0.resize(size_t(n) * 2);
        a.i1.resize(size_t(n) * 2);
        a.w1.resize(size_t(n) * 2);
        for (int o = 0; o < 2 * n; ++o) {
            const double f = (o + 0.5) / 2.0 - 0.5;
            int lo = static_cast<int>(std::floor(f));
            const double fr = f - lo;
            int hi = lo + 1;
            lo = std::clamp(lo, 0, n - 1);
            hi = std::clamp(hi, 0, n - 1);
            a.i0[o] = lo;
            a.i1[o] = hi;
            a.w1[o] = S(fr);
        }
        return a;
    };
    auto tz = std::make_shared<AxisTap>(make_taps(dd));
    auto ty = std::make_shared<AxisTap>(make_taps(hh));
    auto tx = std::make_shared<AxisTap>(make_taps(ww));

    const S* xv = t.val(x).data();
    S* yv = t.mutable_node(y).v.data();
    const size_t ich = size_t(dd) * hh * ww, och = size_t(od) * oh * ow;
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c; ++ch) {
        const S* in = xv + ch * ich;
        S* out = yv + ch * och;
        for (int z = 0; z < od; ++z) {
            const int z0 = tz->i0[z], z1 = tz->i1[z];
            const S wz1 = tz->w1[z], wz0 = S(1) - wz1;
            for (int yy = 0; yy < oh; ++yy) {
                const int y0 = ty->i0[yy], y1 = ty->i1[yy];
                const S wy1 = ty->w1[yy], wy0 = S(1) - wy1;
                const S* r00 = in + (size_t(z0) * hh + y0) * ww;
                const S* r01 = in + (size_t(z0) * hh + y1) * ww;
                const S* r10 = in + (size_t(z1) * hh + y0) * ww;
                const S* r11 = in + (size_t(z1) * hh + y1) * ww;
                S* dst = out + (size_t(z) * oh + yy) * ow;
                for (int xx = 0; xx < ow; ++xx) {
                    const int x0 = tx->i0[xx], x1 = tx->i1[xx];
                    const S wx1 = tx->w1[xx], wx0 = S(1) - wx1;
                    const S c00 = wx0 * r00[x0] + wx1 * r00[x1];
                    const S c01 = wx0 * r01[x0] + wx1 * r01[x1];
                    const S c10 = wx0 * r10[x0] + wx1 * r10[x1];
                    const S c11 = wx0 * r11[x0] + wx1 * r11[x1];
                    dst[xx] = wz0 * (wy0 * c00 + wy1 * c01) + wz1 * (wy0 * c10 + wy1 * c11);
                }
            }
        }
    }

    if (t.node(x).rg)
        t.push_backward([&t, x, y, c, dd, hh, ww, od, oh, ow, tz, ty, tx] {
            const size_t ich = size_t(dd) * hh * ww, och = size_t(od) * oh * ow;
            const S* yg = t.grad(y).data();
            S* xg = t.mutable_node(x).g.data();
            // Scatter per channel; channels are independent so the outer loop
            // stays deterministic under parallel execution.
#pragma omp parallel for schedule(static)
            for (int ch = 0; ch < c; ++ch) {
                const S* go = yg + ch * och;
                S* gi = xg + ch * ich;
                for (int z = 0; z < od; ++z) {
                    const int z0 = tz->i0[z], z1 = tz->i1[z];
                    const S wz1 = tz->w1[z], wz0 = S(1) - wz1;
                    for (int yy = 0; yy < oh; ++yy) {
                        const int y0 = ty->i0[yy], y1 = ty->i1[yy];
                        const S wy1 = ty->w1[yy], wy0 = S(1) - wy1;
                        for (int xx = 0; xx < ow; ++xx) {
                            const int x0 = tx->i0[xx], x1 = tx->i1[xx];
                            const S wx1 = tx->w1[xx], wx0 = S(1) - wx1;
                            const S g = go[(size_t(z) * oh + yy) * ow + xx];
                            gi[(size_t(z0) * hh + y0) * ww + x0] += g * wz0 * wy0 * wx0;
                            gi[(size_t(z0) * hh + y0) * ww + x1] += g * wz0 * wy0 * wx1;
                            gi[(size_t(z0) * hh + y1) * ww + x0] += g * wz0 * wy1 * wx0;
                            gi[(size_t(z0) * hh + y1) * ww + x1] += g * wz0 * wy1 * wx1;
                            gi[(size_t(z1) * hh + y0) * ww + x0] += g * wz1 * wy0 * wx0;
                            gi[(size_t(z1) * hh + y0) * ww + x1] += g * wz1 * wy0 * wx1;
                            gi[(size_t(z1) * hh + y1) * ww + x0] += g * wz1 * wy1 * wx0;
                            gi[(size_t(z1) * hh + y1) * ww + x1] += g * wz1 * wy1 * wx1;
                        }
                    }
                }
            }
        });
    return y;
}

// Channel concatenation of two feature maps with matching spatial dims.
template <class S>
typename Tape<S>::Id concat_channels(Tape<S>& t, typename Tape<S>::Id a, typename Tape<S>::Id b) {
    using Id = typename Tape<S>::Id;
    const Shape as = t.shape(a), bs = t.shape(b);
    if (as.rank != 4 || bs.rank != 4 || as.d[1] != bs.d[1] || as.d[2] != bs.d[2] || as.d[3] != bs.d[3])
        throw std::invalid_argument("concat_channels: spatial dims mismatch");
    const size_t na = t.val(a).size(), nb = t.val(b).size();
    Id y = t.alloc(Shape::fmap(as.d[0] + bs.d[0], as.d[1], as.d[2], as.d[3]),
                   t.node(a).rg || t.node(b).rg);
    auto& yv = t.mutable_node(y).v;
    std::memcpy(yv.data(), t.val(a).data(), na * sizeof(S));
    std::memcpy(yv.data() + na, t.val(b).data(), nb * sizeof(S));
    if (t.node(y).rg)
        t.push_backward([&t, a, b, y, na, nb] {
            const S* yg = t.grad(y).data();
            if (t.node(a).rg) {
                S* ga = t.mutable_node(a).g.data();
                for (size_t i = 0; i < na; ++i) ga[i] += yg[i];
            }
            if (t.node(b).rg) {
                S* gb = t.mutable_node(b).g.data();
                for (size_t i = 0; i < nb; ++i) gb[i] += yg[na + i];
            }
        });
    return y;
}

// Global average pool of a feature map into a channel vector.
template <class S>
typename Tape<S>::Id global_avg_pool(Tape<S>& t, typename Tape<S>::Id x) {
    using Id = typename Tape<S>::Id;
    const Shape xs = t.shape(x);
    const int c = xs.d[0];
    const size_t sp = static_cast<size_t>(xs.spatial());
    Id y = t.alloc(Shape::vec(c), t.node(x).rg);
    const S* xv = t.val(x).data();
    S* yv = t.mutable_node(y).v.data();
    for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        const S* in = xv + size_t(ch) * sp;
        for (size_t i = 0; i < sp; ++i) acc += in[i];
        yv[ch] = S(acc / double(sp));
    }
    if (t.node(x).rg)
        t.push_backward([&t, x, y, c, sp] {
            const S* yg = t.grad(y).data();
            S* xg = t.mutable_node(x).g.data();
            for (int ch = 0; ch < c; ++ch) {
                const S g = yg[ch] / S(sp);
                S* gi = xg + size_t(ch) * sp;
                for (size_t i = 0; i < sp; ++i) gi[i] += g;
            }
        });
    return y;
}

}  // namespace dualprompt::nn
