#pragma once

#include <algorithm>
#include <array>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dualprompt::nn {

// Tensor extents. rank 1: vectors, rank 2: matrices [rows, cols],
// rank 4: feature maps [C, Dz, Dy, Dx] (x fastest).
struct Shape {
    std::array<int, 4> d{1, 1, 1, 1};
    int rank = 0;

    static Shape vec(int n) { return {{n, 1, 1, 1}, 1}; }
    static Shape mat(int r, int c) { return {{r, c, 1, 1}, 2}; }
    static Shape fmap(int ch, int dz, int dy, int dx) { return {{ch, dz, dy, dx}, 4}; }

    int64_t numel() const {
        int64_t n = 1;
        for (int i = 0; i < rank; ++i) n *= d[i];
        return rank == 0 ? 0 : n;
    }
    int channels() const { return d[0]; }
    int64_t spatial() const { return rank == 4 ? int64_t(d[1]) * d[2] * d[3] : 1; }
    bool operator==(const Shape& o) const = default;
};

// Reverse-mode tape. One Tape instance per forward pass; ops append a value
// node plus a backward closure, backward() replays the closures in reverse.
// All loops that write shared outputs are either serial or partitioned by
// output index, so results are bit-reproducible for any thread count.
template <class S>
class Tape {
public:
    using Id = int32_t;
    static constexpr Id kNone = -1;

    struct Node {
        Shape shape;
        std::vector<S> v;
        std::vector<S> g;
        bool rg = false;  // requires grad
    };

    Id leaf(const Shape& sh, std::span<const S> vals, bool requires_grad) {
        if (static_cast<int64_t>(vals.size()) != sh.numel())
            throw std::invalid_argument("tape leaf: value count does not match shape");
        Node n;
        n.shape = sh;
        n.v.assign(vals.begin(), vals.end());
        n.rg = requires_grad;
        if (requires_grad) n.g.assign(n.v.size(), S(0));
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size() - 1);
    }

    Id constant(const Shape& sh, S fill) {
        Node n;
        n.shape = sh;
        n.v.assign(static_cast<size_t>(sh.numel()), fill);
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size() - 1);
    }

    const Node& node(Id i) const { return nodes_.at(i); }
    std::span<const S> val(Id i) const { return nodes_.at(i).v; }
    std::span<const S> grad(Id i) const { return nodes_.at(i).g; }
    const Shape& shape(Id i) const { return nodes_.at(i).shape; }

    // ---- elementwise ----

    Id relu(Id x) {
        Id y = alloc_like(x);
        auto& xv = nodes_[x].v;
        auto& yv = nodes_[y].v;
        for (size_t i = 0; i < xv.size(); ++i) yv[i] = xv[i] > S(0) ? xv[i] : S(0);
        if (nodes_[y].rg)
            tape_.push_back([this, x, y] {
                auto& n = nodes_[x];
                if (!n.rg) return;
                auto& yg = nodes_[y].g;
                auto& xv = nodes_[x].v;
                for (size_t i = 0; i < xv.size(); ++i)
                    if (xv[i] > S(0)) n.g[i] += yg[i];
            });
        return y;
    }

    Id sigmoid(Id x) {
        Id y = alloc_like(x);
        auto& xv = nodes_[x].v;
        auto& yv = nodes_[y].v;
        for (size_t i = 0; i < xv.size(); ++i) yv[i] = S(1) / (S(1) + std::exp(-xv[i]));
        if (nodes_[y].rg)
            tape_.push_back([this, x, y] {
                auto& n = nodes_[x];
                if (!n.rg) return;
                auto& yg = nodes_[y].g;
                auto& yv = nodes_[y].v;
                for (size_t i = 0; i < yv.size(); ++i) n.g[i] += yg[i] * yv[i] * (S(1) - yv[i]);
            });
        return y;
    }

    Id add(Id a, Id b) {
        check_same_shape(a, b, "add");
        Id y = alloc_like2(a, b);
        auto& av = nodes_[a].v;
        auto& bv = nodes_[b].v;
        auto& yv = nodes_[y].v;
        for (size_t i = 0; i < av.size(); ++i) yv[i] = av[i] + bv[i];
        if (nodes_[y].rg)
            tape_.push_back([this, a, b, y] {
                auto& yg = nodes_[y].g;
                if (nodes_[a].rg)
                    for (size_t i = 0; i < yg.size(); ++i) nodes_[a].g[i] += yg[i];
                if (nodes_[b].rg)
                    for (size_t i = 0; i < yg.size(); ++i) nodes_[b].g[i] += yg[i];
            });
        return y;
    }

    Id scale(Id x, S k) {
        Id y = alloc_like(x);
        auto& xv = nodes_[x].v;
        auto& yv = nodes_[y].v;
        for (size_t i = 0; i < xv.size(); ++i) yv[i] = xv[i] * k;
        if (nodes_[y].rg)
            tape_.push_back([this, x, y, k] {
                if (!nodes_[x].rg) return;
                auto& yg = nodes_[y].g;
                for (size_t i = 0; i < yg.size(); ++i) nodes_[x].g[i] += yg[i] * k;
            });
        return y;
    }

    // ---- vector / dense ----

    Id concat_vec(Id a, Id b) {
        const int na = static_cast<int>(nodes_[a].v.size());
        const int nb = static_cast<int>(nodes_[b].v.size());
        Id y = alloc(Shape::vec(na + nb), nodes_[a].rg || nodes_[b].rg);
        std::copy(nodes_[a].v.begin(), nodes_[a].v.end(), nodes_[y].v.begin());
        std::copy(nodes_[b].v.begin(), nodes_[b].v.end(), nodes_[y].v.begin() + na);
        if (nodes_[y].rg)
            tape_.push_back([this, a, b, y, na, nb] {
                auto& yg = nodes_[y].g;
                if (nodes_[a].rg)
                    for (int i = 0; i < na; ++i) nodes_[a].g[i] += yg[i];
                if (nodes_[b].rg)
                    for (int i = 0; i < nb; ++i) nodes_[b].g[i] += yg[na + i];
            });
        return y;
    }

    Id slice_vec(Id x, int offset, int len) {
        if (offset < 0 || len < 0 || offset + len > static_cast<int>(nodes_[x].v.size()))
            throw std::invalid_argument("slice_vec out of range");
        Id y = alloc(Shape::vec(len), nodes_[x].rg);
        std::copy_n(nodes_[x].v.begin() + offset, len, nodes_[y].v.begin());
        if (nodes_[y].rg)
            tape_.push_back([this, x, y, offset, len] {
                if (!nodes_[x].rg) return;
                auto& yg = nodes_[y].g;
                for (int i = 0; i < len; ++i) nodes_[x].g[offset + i] += yg[i];
            });
        return y;
    }

    // y = W x + b, W: [out, in] row-major, b optional (kNone to skip)
    Id linear(Id W, Id b, Id x) {
        const Shape& ws = nodes_[W].shape;
        if (ws.rank != 2) throw std::invalid_argument("linear: W must be a matrix");
        const int out = ws.d[0], in = ws.d[1];
        if (static_cast<int>(nodes_[x].v.size()) != in)
            throw std::invalid_argument("linear: input length mismatch");
        const bool rg = nodes_[W].rg || nodes_[x].rg || (b != kNone && nodes_[b].rg);
        Id y = alloc(Shape::vec(out), rg);
        const S* wv = nodes_[W].v.data();
        const S* xv = nodes_[x].v.data();
        S* yv = nodes_[y].v.data();
        for (int o = 0; o < out; ++o) {
            S acc = b != kNone ? nodes_[b].v[o] : S(0);
            const S* row = wv + static_cast<size_t>(o) * in;
            for (int i = 0; i < in; ++i) acc += row[i] * xv[i];
            yv[o] = acc;
        }
        if (rg)
            tape_.push_back([this, W, b, x, y, out, in] {
                const S* yg = nodes_[y].g.data();
                const S* wv = nodes_[W].v.data();
                const S* xv = nodes_[x].v.data();
                if (nodes_[x].rg) {
                    S* xg = nodes_[x].g.data();
                    for (int i = 0; i < in; ++i) {
                        S acc = S(0);
                        for (int o = 0; o < out; ++o) acc += wv[static_cast<size_t>(o) * in + i] * yg[o];
                        xg[i] += acc;
                    }
                }
                if (nodes_[W].rg) {
                    S* wg = nodes_[W].g.data();
                    for (int o = 0; o < out; ++o)
                        for (int i = 0; i < in; ++i) wg[static_cast<size_t>(o) * in + i] += yg[o] * xv[i];
                }
                if (b != kNone && nodes_[b].rg)
                    for (int o = 0; o < out; ++o) nodes_[b].g[o] += yg[o];
            });
        return y;
    }

    // C = A B with A: [m,k], B: [k,n], all row-major. Sized for the small
    // adapter products (tens of rows), not for feature maps.
    Id matmul(Id A, Id B) {
        const Shape& as = nodes_[A].shape;
        const Shape& bs = nodes_[B].shape;
        if (as.rank != 2 || bs.rank != 2 || as.d[1] != bs.d[0])
            throw std::invalid_argument("matmul: inner dimensions mismatch");
        const int m = as.d[0], k = as.d[1], n = bs.d[1];
        Id y = alloc(Shape::mat(m, n), nodes_[A].rg || nodes_[B].rg);
        const S* av = nodes_[A].v.data();
        const S* bv = nodes_[B].v.data();
        S* yv = nodes_[y].v.data();
        for (int i = 0; i < m; ++i)
            for (int p = 0; p < k; ++p) {
                const S a = av[static_cast<size_t>(i) * k + p];
                const S* brow = bv + static_cast<size_t>(p) * n;
                S* yrow = yv + static_cast<size_t>(i) * n;
                for (int j = 0; j < n; ++j) yrow[j] += a * brow[j];
            }
        if (nodes_[y].rg)
            tape_.push_back([this, A, B, y, m, k, n] {
                const S* yg = nodes_[y].g.data();
                const S* av = nodes_[A].v.data();
                const S* bv = nodes_[B].v.data();
                if (nodes_[A].rg) {
                    S* ag = nodes_[A].g.data();
                    for (int i = 0; i < m; ++i)
                        for (int p = 0; p < k; ++p) {
                            S acc = S(0);
                            const S* yrow = yg + static_cast<size_t>(i) * n;
                            const S* brow = bv + static_cast<size_t>(p) * n;
                            for (int j = 0; j < n; ++j) acc += yrow[j] * brow[j];
                            ag[static_cast<size_t>(i) * k + p] += acc;
                        }
                }
                if (nodes_[B].rg) {
                    S* bg = nodes_[B].g.data();
                    for (int p = 0; p < k; ++p)
                        for (int i = 0; i < m; ++i) {
                            const S a = av[static_cast<size_t>(i) * k + p];
                            const S* yrow = yg + static_cast<size_t>(i) * n;
                            S* brow = bg + static_cast<size_t>(p) * n;
                            for (int j = 0; j < n; ++j) brow[j] += a * yrow[j];
                        }
                }
            });
        return y;
    }

    // Reinterpret a vector node as a matrix (or back); no data movement.
    Id reshape(Id x, const Shape& sh) {
        if (sh.numel() != nodes_[x].shape.numel())
            throw std::invalid_argument("reshape: element count mismatch");
        Id y = alloc(sh, nodes_[x].rg);
        std::copy(nodes_[x].v.begin(), nodes_[x].v.end(), nodes_[y].v.begin());
        if (nodes_[y].rg)
            tape_.push_back([this, x, y] {
                if (!nodes_[x].rg) return;
                auto& yg = nodes_[y].g;
                for (size_t i = 0; i < yg.size(); ++i) nodes_[x].g[i] += yg[i];
            });
        return y;
    }

    Id softmax_vec(Id x) {
        const int n = static_cast<int>(nodes_[x].v.size());
        Id y = alloc(Shape::vec(n), nodes_[x].rg);
        const S* xv = nodes_[x].v.data();
        S* yv = nodes_[y].v.data();
        S mx = xv[0];
        for (int i = 1; i < n; ++i) mx = std::max(mx, xv[i]);
        S sum = S(0);
        for (int i = 0; i < n; ++i) {
            yv[i] = std::exp(xv[i] - mx);
            sum += yv[i];
        }
        const S inv = S(1) / sum;
        for (int i = 0; i < n; ++i) yv[i] *= inv;
        if (nodes_[y].rg)
            tape_.push_back([this, x, y, n] {
                if (!nodes_[x].rg) return;
                const S* yv = nodes_[y].v.data();
                const S* yg = nodes_[y].g.data();
                S dot = S(0);
                for (int i = 0; i < n; ++i) dot += yv[i] * yg[i];
                S* xg = nodes_[x].g.data();
                for (int i = 0; i < n; ++i) xg[i] += yv[i] * (yg[i] - dot);
            });
        return y;
    }

    // Rows of vectors -> matrix [N, B]; used to batch survival heads.
    Id stack_rows(const std::vector<Id>& rows) {
        if (rows.empty()) throw std::invalid_argument("stack_rows: empty batch");
        const int b = static_cast<int>(nodes_[rows[0]].v.size());
        bool rg = false;
        for (Id r : rows) {
            if (static_cast<int>(nodes_[r].v.size()) != b)
                throw std::invalid_argument("stack_rows: ragged rows");
            rg = rg || nodes_[r].rg;
        }
        const int n = static_cast<int>(rows.size());
        Id y = alloc(Shape::mat(n, b), rg);
        for (int r = 0; r < n; ++r)
            std::copy(nodes_[rows[r]].v.begin(), nodes_[rows[r]].v.end(),
                      nodes_[y].v.begin() + static_cast<size_t>(r) * b);
        if (rg)
            tape_.push_back([this, rows, y, b] {
                auto& yg = nodes_[y].g;
                for (size_t r = 0; r < rows.size(); ++r) {
                    if (!nodes_[rows[r]].rg) continue;
                    for (int i = 0; i < b; ++i) nodes_[rows[r]].g[i] += yg[r * b + i];
                }
            });
        return y;
    }

    // mean of a set of scalar nodes
    Id mean_scalars(const std::vector<Id>& xs) {
        if (xs.empty()) throw std::invalid_argument("mean_scalars: empty");
        bool rg = false;
        for (Id x : xs) rg = rg || nodes_[x].rg;
        Id y = alloc(Shape::vec(1), rg);
        S acc = S(0);
        for (Id x : xs) acc += nodes_[x].v[0];
        nodes_[y].v[0] = acc / static_cast<S>(xs.size());
        if (rg)
            tape_.push_back([this, xs, y] {
                const S g = nodes_[y].g[0] / static_cast<S>(xs.size());
                for (Id x : xs)
                    if (nodes_[x].rg) nodes_[x].g[0] += g;
            });
        return y;
    }

    // ---- backward ----

    void backward(Id root) {
        if (nodes_[root].v.size() != 1) throw std::invalid_argument("backward: root must be scalar");
        if (!nodes_[root].rg) throw std::invalid_argument("backward: root does not require grad");
        nodes_[root].g[0] = S(1);
        for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
    }

    // ---- allocation helpers shared with op headers ----

    Id alloc(const Shape& sh, bool rg) {
        Node n;
        n.shape = sh;
        n.v.assign(static_cast<size_t>(sh.numel()), S(0));
        n.rg = rg;
        if (rg) n.g.assign(n.v.size(), S(0));
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size() - 1);
    }
    Id alloc_like(Id x) { return alloc(nodes_[x].shape, nodes_[x].rg); }
    Id alloc_like2(Id a, Id b) { return alloc(nodes_[a].shape, nodes_[a].rg || nodes_[b].rg); }

    Node& mutable_node(Id i) { return nodes_[i]; }
    void push_backward(std::function<void()> fn) { tape_.push_back(std::move(fn)); }

    void check_same_shape(Id a, Id b, const char* op) const {
        if (!(nodes_[a].shape == nodes_[b].shape))
            throw std::invalid_argument(std::string(op) + ": shape mismatch");
    }

private:
    std::vector<Node> nodes_;
    std::vector<std::function<void()>> tape_;
};

}  // namespace dualprompt::nn
