#pragma once

// Tiny autoregressive trace policy with exact hand-written reverse-mode
// gradients, float64 throughout. Two pre-norm single-head attention blocks
// (width 32) over a mixed input sequence: token embeddings, one pooled
// observation feature position, one proprioception position, evidence-patch
// positions, and K action-query positions per action chunk.
//
// Reasoning tokens are generated causally; the K action positions of a chunk
// are decoded in parallel from learned query inputs, attend bidirectionally
// within the chunk (plus the whole prefix), and each predicts its own slot's
// action token over the action sub-vocabulary. Evidence positions are inputs
// only and never contribute likelihood.

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "rng.hpp"
#include "util.hpp"
#include "vocab.hpp"

namespace zoomvla {

struct SequenceTooLong : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct PolicyConfig {
    int vocab_size = 0;
    int dim = 32;
    int n_blocks = 2;
    int ffn_hidden = 128;
    int max_seq_len = 128;
    int obs_dim = 6 * 6 * 3;
    int evid_dim = 24 * 24 * 3;
    int proprio_dim = 28;
    int chunk_len = 4;
    std::vector<int> action_token_ids; // slot sub-vocabulary, primitive order

    bool operator==(const PolicyConfig&) const = default;
};

// ---------------------------------------------------------------------------
// flat parameter layout
// ---------------------------------------------------------------------------

struct ParamLayout {
    int d = 0, V = 0, F = 0, L = 0;
    // section offsets into the flat vector
    size_t tok_emb = 0, pos_emb = 0;
    size_t obs_w = 0, obs_b = 0, evid_w = 0, evid_b = 0, prop_w = 0, prop_b = 0;
    size_t act_query = 0;
    struct Block {
        size_t rms1_g, wq, bq, wk, bk, wv, bv, wo, bo, rms2_g, w1, b1, w2, b2;
    };
    std::vector<Block> blocks;
    size_t rmsf_g = 0, out_w = 0, out_b = 0;
    size_t total = 0;

    static ParamLayout make(const PolicyConfig& cfg) {
        ParamLayout lay;
        lay.d = cfg.dim;
        lay.V = cfg.vocab_size;
        lay.F = cfg.ffn_hidden;
        lay.L = cfg.max_seq_len;
        size_t p = 0;
        auto claim = [&p](size_t n) { size_t at = p; p += n; return at; };
        const size_t d = static_cast<size_t>(cfg.dim);
        lay.tok_emb = claim(static_cast<size_t>(cfg.vocab_size) * d);
        lay.pos_emb = claim(static_cast<size_t>(cfg.max_seq_len) * d);
        lay.obs_w = claim(static_cast<size_t>(cfg.obs_dim) * d);
        lay.obs_b = claim(d);
        lay.evid_w = claim(static_cast<size_t>(cfg.evid_dim) * d);
        lay.evid_b = claim(d);
        lay.prop_w = claim(static_cast<size_t>(cfg.proprio_dim) * d);
        lay.prop_b = claim(d);
        lay.act_query = claim(d);
        for (int b = 0; b < cfg.n_blocks; ++b) {
            Block blk;
            blk.rms1_g = claim(d);
            blk.wq = claim(d * d);
            blk.bq = claim(d);
            blk.wk = claim(d * d);
            blk.bk = claim(d);
            blk.wv = claim(d * d);
            blk.bv = claim(d);
            blk.wo = claim(d * d);
            blk.bo = claim(d);
            blk.rms2_g = claim(d);
            blk.w1 = claim(d * static_cast<size_t>(cfg.ffn_hidden));
            blk.b1 = claim(static_cast<size_t>(cfg.ffn_hidden));
            blk.w2 = claim(static_cast<size_t>(cfg.ffn_hidden) * d);
            blk.b2 = claim(d);
            lay.blocks.push_back(blk);
        }
        lay.rmsf_g = claim(d);
        lay.out_w = claim(d * static_cast<size_t>(cfg.vocab_size));
        lay.out_b = claim(static_cast<size_t>(cfg.vocab_size));
        lay.total = p;
        return lay;
    }
};

struct PolicyParams {
    PolicyConfig cfg;
    ParamLayout layout;
    std::vector<double> w;

    static PolicyParams zeros(const PolicyConfig& cfg) {
        PolicyParams p;
        p.cfg = cfg;
        p.layout = ParamLayout::make(cfg);
        p.w.assign(p.layout.total, 0.0);
        return p;
    }

    /// Seeded init: embeddings N(0, 0.08), projections N(0, 1/sqrt(fan_in)),
    /// norm gains 1, biases 0.
    static PolicyParams init(const PolicyConfig& cfg, uint64_t seed) {
        PolicyParams p = zeros(cfg);
        Rng rng = substream(seed, "policy-init");
        const auto& lay = p.layout;
        auto fill_normal = [&](size_t off, size_t n, double std) {
            for (size_t i = 0; i < n; ++i) {
                p.w[off + i] = rng.next_normal() * std;
            }
        };
        auto fill_ones = [&](size_t off, size_t n) {
            for (size_t i = 0; i < n; ++i) {
                p.w[off + i] = 1.0;
            }
        };
        const size_t d = static_cast<size_t>(cfg.dim);
        fill_normal(lay.tok_emb, static_cast<size_t>(cfg.vocab_size) * d, 0.08);
        fill_normal(lay.pos_emb, static_cast<size_t>(cfg.max_seq_len) * d, 0.08);
        fill_normal(lay.obs_w, static_cast<size_t>(cfg.obs_dim) * d, 1.0 / std::sqrt(cfg.obs_dim));
        fill_normal(lay.evid_w, static_cast<size_t>(cfg.evid_dim) * d, 1.0 / std::sqrt(cfg.evid_dim));
        fill_normal(lay.prop_w, static_cast<size_t>(cfg.proprio_dim) * d, 1.0 / std::sqrt(cfg.proprio_dim));
        fill_normal(lay.act_query, d, 0.08);
        for (const auto& blk : lay.blocks) {
            fill_ones(blk.rms1_g, d);
            fill_ones(blk.rms2_g, d);
            double ws = 1.0 / std::sqrt(cfg.dim);
            fill_normal(blk.wq, d * d, ws);
            fill_normal(blk.wk, d * d, ws);
            fill_normal(blk.wv, d * d, ws);
            fill_normal(blk.wo, d * d, ws);
            fill_normal(blk.w1, d * static_cast<size_t>(cfg.ffn_hidden), ws);
            fill_normal(blk.w2, static_cast<size_t>(cfg.ffn_hidden) * d, 1.0 / std::sqrt(cfg.ffn_hidden));
        }
        fill_ones(lay.rmsf_g, d);
        fill_normal(lay.out_w, d * static_cast<size_t>(cfg.vocab_size), 1.0 / std::sqrt(cfg.dim));
        return p;
    }

    bool finite() const {
        for (double v : w) {
            if (!std::isfinite(v)) {
                return false;
            }
        }
        return true;
    }
};

using GradBuffer = std::vector<double>;

// ---------------------------------------------------------------------------
// policy input sequence
// ---------------------------------------------------------------------------

enum class InputKind : uint8_t { Token, Obs, Evid, Proprio, ActionQuery };

struct SeqPos {
    InputKind kind = InputKind::Token;
    int token = -1;            // Token inputs
    std::vector<double> feat;  // Obs / Evid / Proprio feature inputs
    int target = -1;           // token to predict; -1 = no likelihood here
    bool slot = false;         // action slot: target predicted at this position
    int block_id = -1;         // action-chunk block for the hybrid mask
};

using PolicySequence = std::vector<SeqPos>;

inline int count_generated(const PolicySequence& seq) {
    int n = 0;
    for (const auto& p : seq) {
        n += (p.target >= 0);
    }
    return n;
}

// Builder helpers. Targets follow the convention: position p predicts the
// token at p+1 unless p+1 was injected by the controller, and an action slot
// predicts its own token.

inline void seq_push_token(PolicySequence& seq, int token, bool sampled_by_policy) {
    if (sampled_by_policy && !seq.empty() && !seq.back().slot) {
        seq.back().target = token;
    }
    SeqPos p;
    p.kind = InputKind::Token;
    p.token = token;
    seq.push_back(std::move(p));
}

inline void seq_push_feat(PolicySequence& seq, InputKind kind, std::vector<double> feat) {
    SeqPos p;
    p.kind = kind;
    p.feat = std::move(feat);
    seq.push_back(std::move(p));
}

inline void seq_push_action_slot(PolicySequence& seq, int action_token, int block_id) {
    SeqPos p;
    p.kind = InputKind::ActionQuery;
    p.target = action_token;
    p.slot = true;
    p.block_id = block_id;
    seq.push_back(std::move(p));
}

/// Hybrid attention mask derived from the slot layout: causal everywhere,
/// fully bidirectional inside each action block.
struct AttnMask {
    std::vector<int> block_ids;

    static AttnMask of(const PolicySequence& seq) {
        AttnMask m;
        m.block_ids.reserve(seq.size());
        for (const auto& p : seq) {
            m.block_ids.push_back(p.block_id);
        }
        return m;
    }

    bool allowed(int i, int j) const {
        if (j <= i) {
            return true;
        }
        return block_ids[static_cast<size_t>(i)] >= 0 &&
               block_ids[static_cast<size_t>(i)] == block_ids[static_cast<size_t>(j)];
    }

    std::vector<uint8_t> materialize() const {
        const int L = static_cast<int>(block_ids.size());
        std::vector<uint8_t> m(static_cast<size_t>(L) * L, 0);
        for (int i = 0; i < L; ++i) {
            for (int j = 0; j < L; ++j) {
                m[static_cast<size_t>(i) * L + j] = allowed(i, j) ? 1 : 0;
            }
        }
        return m;
    }
};

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

inline constexpr double kRmsEps = 1e-5;

struct Tape {
    int L = 0;
    std::vector<double> x0; // L x d, inputs after positional embedding
    struct BlockTape {
        std::vector<double> x_in, xh1, q, k, v, attn_p, attn_o, x2, xh2, ffn_u, ffn_h;
        std::vector<double> r1, r2; // per-row inverse rms
    };
    std::vector<BlockTape> blocks;
    std::vector<double> x_last, xf, rf;
    std::vector<double> logits; // L x V
};

namespace detail {

inline void rmsnorm_fwd(const double* x, const double* g, double* y, double* r_out, int L, int d) {
    for (int l = 0; l < L; ++l) {
        double ss = 0.0;
        for (int i = 0; i < d; ++i) {
            ss += x[l * d + i] * x[l * d + i];
        }
        double r = 1.0 / std::sqrt(ss / d + kRmsEps);
        r_out[l] = r;
        for (int i = 0; i < d; ++i) {
            y[l * d + i] = g[i] * x[l * d + i] * r;
        }
    }
}

// y[l][j] = sum_i x[l][i] * w[i][j] + b[j]
inline void linear_fwd(const double* x, const double* w, const double* b, double* y,
                       int L, int din, int dout) {
    for (int l = 0; l < L; ++l) {
        for (int j = 0; j < dout; ++j) {
            y[l * dout + j] = b ? b[j] : 0.0;
        }
        for (int i = 0; i < din; ++i) {
            double xv = x[l * din + i];
            if (xv == 0.0) {
                continue;
            }
            const double* wr = w + static_cast<size_t>(i) * dout;
            double* yr = y + static_cast<size_t>(l) * dout;
            for (int j = 0; j < dout; ++j) {
                yr[j] += xv * wr[j];
            }
        }
    }
}

inline double silu(double x) {
    double s = 1.0 / (1.0 + std::exp(-x));
    return x * s;
}

inline double silu_grad(double x) {
    double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

} // namespace detail

/// Full forward pass; returns the tape needed for backward.
inline Tape forward(const PolicyParams& params, const PolicySequence& seq) {
    const auto& cfg = params.cfg;
    const auto& lay = params.layout;
    const int L = static_cast<int>(seq.size());
    const int d = cfg.dim;
    const int F = cfg.ffn_hidden;
    const int V = cfg.vocab_size;
    if (L > cfg.max_seq_len) {
        throw SequenceTooLong("sequence length " + std::to_string(L) + " > " +
                              std::to_string(cfg.max_seq_len));
    }
    const double* w = params.w.data();
    Tape tape;
    tape.L = L;
    tape.x0.assign(static_cast<size_t>(L) * d, 0.0);

    for (int l = 0; l < L; ++l) {
        double* x = tape.x0.data() + static_cast<size_t>(l) * d;
        const SeqPos& p = seq[static_cast<size_t>(l)];
        switch (p.kind) {
            case InputKind::Token:
                for (int i = 0; i < d; ++i) {
                    x[i] = w[lay.tok_emb + static_cast<size_t>(p.token) * d + i];
                }
                break;
            case InputKind::Obs:
                for (int j = 0; j < d; ++j) {
                    double acc = w[lay.obs_b + j];
                    for (int i = 0; i < cfg.obs_dim; ++i) {
                        acc += p.feat[static_cast<size_t>(i)] * w[lay.obs_w + static_cast<size_t>(i) * d + j];
                    }
                    x[j] = acc;
                }
                break;
            case InputKind::Evid:
                for (int j = 0; j < d; ++j) {
                    double acc = w[lay.evid_b + j];
                    for (int i = 0; i < cfg.evid_dim; ++i) {
                        acc += p.feat[static_cast<size_t>(i)] * w[lay.evid_w + static_cast<size_t>(i) * d + j];
                    }
                    x[j] = acc;
                }
                break;
            case InputKind::Proprio:
                for (int j = 0; j < d; ++j) {
                    double acc = w[lay.prop_b + j];
                    for (int i = 0; i < cfg.proprio_dim; ++i) {
                        acc += p.feat[static_cast<size_t>(i)] * w[lay.prop_w + static_cast<size_t>(i) * d + j];
                    }
                    x[j] = acc;
                }
                break;
            case InputKind::ActionQuery:
                for (int i = 0; i < d; ++i) {
                    x[i] = w[lay.act_query + i];
                }
                break;
        }
        for (int i = 0; i < d; ++i) {
            x[i] += w[lay.pos_emb + static_cast<size_t>(l) * d + i];
        }
    }

    AttnMask mask = AttnMask::of(seq);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    std::vector<double> x = tape.x0;
    tape.blocks.resize(static_cast<size_t>(cfg.n_blocks));
    for (int b = 0; b < cfg.n_blocks; ++b) {
        auto& bt = tape.blocks[static_cast<size_t>(b)];
        const auto& blk = lay.blocks[static_cast<size_t>(b)];
        bt.x_in = x;
        bt.xh1.assign(static_cast<size_t>(L) * d, 0.0);
        bt.r1.assign(static_cast<size_t>(L), 0.0);
        detail::rmsnorm_fwd(bt.x_in.data(), w + blk.rms1_g, bt.xh1.data(), bt.r1.data(), L, d);

        bt.q.assign(static_cast<size_t>(L) * d, 0.0);
        bt.k.assign(static_cast<size_t>(L) * d, 0.0);
        bt.v.assign(static_cast<size_t>(L) * d, 0.0);
        detail::linear_fwd(bt.xh1.data(), w + blk.wq, w + blk.bq, bt.q.data(), L, d, d);
        detail::linear_fwd(bt.xh1.data(), w + blk.wk, w + blk.bk, bt.k.data(), L, d, d);
        detail::linear_fwd(bt.xh1.data(), w + blk.wv, w + blk.bv, bt.v.data(), L, d, d);

        bt.attn_p.assign(static_cast<size_t>(L) * L, 0.0);
        bt.attn_o.assign(static_cast<size_t>(L) * d, 0.0);
        for (int i = 0; i < L; ++i) {
            double mx = -1e300;
            for (int j = 0; j < L; ++j) {
                if (!mask.allowed(i, j)) {
                    continue;
                }
                double s = 0.0;
                for (int t = 0; t < d; ++t) {
                    s += bt.q[static_cast<size_t>(i) * d + t] * bt.k[static_cast<size_t>(j) * d + t];
                }
                s *= scale;
                bt.attn_p[static_cast<size_t>(i) * L + j] = s;
                mx = std::max(mx, s);
            }
            double z = 0.0;
            for (int j = 0; j < L; ++j) {
                if (!mask.allowed(i, j)) {
                    continue;
                }
                double e = std::exp(bt.attn_p[static_cast<size_t>(i) * L + j] - mx);
                bt.attn_p[static_cast<size_t>(i) * L + j] = e;
                z += e;
            }
            for (int j = 0; j < L; ++j) {
                if (!mask.allowed(i, j)) {
                    bt.attn_p[static_cast<size_t>(i) * L + j] = 0.0;
                    continue;
                }
                double a = bt.attn_p[static_cast<size_t>(i) * L + j] / z;
                bt.attn_p[static_cast<size_t>(i) * L + j] = a;
                for (int t = 0; t < d; ++t) {
                    bt.attn_o[static_cast<size_t>(i) * d + t] += a * bt.v[static_cast<size_t>(j) * d + t];
                }
            }
        }

        bt.x2.assign(static_cast<size_t>(L) * d, 0.0);
        detail::linear_fwd(bt.attn_o.data(), w + blk.wo, w + blk.bo, bt.x2.data(), L, d, d);
        for (size_t i = 0; i < bt.x2.size(); ++i) {
            bt.x2[i] += bt.x_in[i];
        }

        bt.xh2.assign(static_cast<size_t>(L) * d, 0.0);
        bt.r2.assign(static_cast<size_t>(L), 0.0);
        detail::rmsnorm_fwd(bt.x2.data(), w + blk.rms2_g, bt.xh2.data(), bt.r2.data(), L, d);

        bt.ffn_u.assign(static_cast<size_t>(L) * F, 0.0);
        detail::linear_fwd(bt.xh2.data(), w + blk.w1, w + blk.b1, bt.ffn_u.data(), L, d, F);
        bt.ffn_h.assign(static_cast<size_t>(L) * F, 0.0);
        for (size_t i = 0; i < bt.ffn_u.size(); ++i) {
            bt.ffn_h[i] = detail::silu(bt.ffn_u[i]);
        }
        x.assign(static_cast<size_t>(L) * d, 0.0);
        detail::linear_fwd(bt.ffn_h.data(), w + blk.w2, w + blk.b2, x.data(), L, F, d);
        for (size_t i = 0; i < x.size(); ++i) {
            x[i] += bt.x2[i];
        }
    }

    tape.x_last = x;
    tape.xf.assign(static_cast<size_t>(L) * d, 0.0);
    tape.rf.assign(static_cast<size_t>(L), 0.0);
    detail::rmsnorm_fwd(tape.x_last.data(), w + lay.rmsf_g, tape.xf.data(), tape.rf.data(), L, d);
    tape.logits.assign(static_cast<size_t>(L) * V, 0.0);
    detail::linear_fwd(tape.xf.data(), w + lay.out_w, w + lay.out_b, tape.logits.data(), L, d, V);
    return tape;
}

/// Row l of the result holds next-token logits at position l.
inline std::vector<double> forward_logits(const PolicyParams& params, const PolicySequence& seq) {
    return forward(params, seq).logits;
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

/// Exact reverse-mode gradient: accumulates d(scalar)/d(params) into grad for
/// the scalar whose logit-gradient matrix is dlogits (L x V). Throws
/// NumericalFault on non-finite gradients.
inline void backward(const PolicyParams& params, const PolicySequence& seq, const Tape& tape,
                     const std::vector<double>& dlogits, GradBuffer& grad) {
    const auto& cfg = params.cfg;
    const auto& lay = params.layout;
    const int L = tape.L;
    const int d = cfg.dim;
    const int F = cfg.ffn_hidden;
    const int V = cfg.vocab_size;
    const double* w = params.w.data();
    double* g = grad.data();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    AttnMask mask = AttnMask::of(seq);

    auto rms_bwd = [&](const double* x, const double* gain, const double* r, const double* dy,
                       double* dx, size_t dgain_off) {
        for (int l = 0; l < L; ++l) {
            const double* xr = x + static_cast<size_t>(l) * d;
            const double* dyr = dy + static_cast<size_t>(l) * d;
            double* dxr = dx + static_cast<size_t>(l) * d;
            double rl = r[l];
            double dot = 0.0;
            for (int i = 0; i < d; ++i) {
                dot += dyr[i] * gain[i] * xr[i];
                g[dgain_off + static_cast<size_t>(i)] += dyr[i] * xr[i] * rl;
            }
            double c = dot * rl * rl * rl / d;
            for (int i = 0; i < d; ++i) {
                dxr[i] += gain[i] * dyr[i] * rl - xr[i] * c;
            }
        }
    };
    // y = x W + b; accumulates dW, db, and dx += dy W^T
    auto linear_bwd = [&](const double* x, const double* wmat, const double* dy, double* dx,
                          size_t dw_off, size_t db_off, int din, int dout) {
        for (int l = 0; l < L; ++l) {
            const double* xr = x + static_cast<size_t>(l) * din;
            const double* dyr = dy + static_cast<size_t>(l) * dout;
            for (int j = 0; j < dout; ++j) {
                g[db_off + static_cast<size_t>(j)] += dyr[j];
            }
            for (int i = 0; i < din; ++i) {
                double xv = xr[i];
                const double* wr = wmat + static_cast<size_t>(i) * dout;
                double* gw = g + dw_off + static_cast<size_t>(i) * dout;
                double acc = 0.0;
                for (int j = 0; j < dout; ++j) {
                    gw[j] += xv * dyr[j];
                    acc += wr[j] * dyr[j];
                }
                if (dx) {
                    dx[static_cast<size_t>(l) * din + i] += acc;
                }
            }
        }
    };

    // final projection + norm
    std::vector<double> dxf(static_cast<size_t>(L) * d, 0.0);
    linear_bwd(tape.xf.data(), w + lay.out_w, dlogits.data(), dxf.data(), lay.out_w, lay.out_b, d, V);
    std::vector<double> dx(static_cast<size_t>(L) * d, 0.0);
    rms_bwd(tape.x_last.data(), w + lay.rmsf_g, tape.rf.data(), dxf.data(), dx.data(), lay.rmsf_g);

    for (int b = cfg.n_blocks - 1; b >= 0; --b) {
        const auto& bt = tape.blocks[static_cast<size_t>(b)];
        const auto& blk = lay.blocks[static_cast<size_t>(b)];

        // FFN: x3 = x2 + W2 silu(W1 xh2 + b1) + b2, dx currently = dx3
        std::vector<double> dh(static_cast<size_t>(L) * F, 0.0);
        linear_bwd(bt.ffn_h.data(), w + blk.w2, dx.data(), dh.data(), blk.w2, blk.b2, F, d);
        for (size_t i = 0; i < dh.size(); ++i) {
            dh[i] *= detail::silu_grad(bt.ffn_u[i]);
        }
        std::vector<double> dxh2(static_cast<size_t>(L) * d, 0.0);
        linear_bwd(bt.xh2.data(), w + blk.w1, dh.data(), dxh2.data(), blk.w1, blk.b1, d, F);
        std::vector<double> dx2 = dx; // residual branch
        rms_bwd(bt.x2.data(), w + blk.rms2_g, bt.r2.data(), dxh2.data(), dx2.data(), blk.rms2_g);

        // attention: x2 = x_in + Wo attn_o + bo
        std::vector<double> dao(static_cast<size_t>(L) * d, 0.0);
        linear_bwd(bt.attn_o.data(), w + blk.wo, dx2.data(), dao.data(), blk.wo, blk.bo, d, d);

        std::vector<double> dq(static_cast<size_t>(L) * d, 0.0);
        std::vector<double> dk(static_cast<size_t>(L) * d, 0.0);
        std::vector<double> dv(static_cast<size_t>(L) * d, 0.0);
        std::vector<double> da_row(static_cast<size_t>(L), 0.0);
        for (int i = 0; i < L; ++i) {
            const double* daor = dao.data() + static_cast<size_t>(i) * d;
            double dot_all = 0.0;
            for (int j = 0; j < L; ++j) {
                double a = bt.attn_p[static_cast<size_t>(i) * L + j];
                if (a == 0.0 && !mask.allowed(i, j)) {
                    da_row[static_cast<size_t>(j)] = 0.0;
                    continue;
                }
                double da = 0.0;
                const double* vr = bt.v.data() + static_cast<size_t>(j) * d;
                for (int t = 0; t < d; ++t) {
                    da += daor[t] * vr[t];
                    dv[static_cast<size_t>(j) * d + t] += a * daor[t];
                }
                da_row[static_cast<size_t>(j)] = da;
                dot_all += a * da;
            }
            for (int j = 0; j < L; ++j) {
                if (!mask.allowed(i, j)) {
                    continue;
                }
                double a = bt.attn_p[static_cast<size_t>(i) * L + j];
                double ds = a * (da_row[static_cast<size_t>(j)] - dot_all) * scale;
                if (ds == 0.0) {
                    continue;
                }
                const double* kr = bt.k.data() + static_cast<size_t>(j) * d;
                const double* qr = bt.q.data() + static_cast<size_t>(i) * d;
                for (int t = 0; t < d; ++t) {
                    dq[static_cast<size_t>(i) * d + t] += ds * kr[t];
                    dk[static_cast<size_t>(j) * d + t] += ds * qr[t];
                }
            }
        }

        std::vector<double> dxh1(static_cast<size_t>(L) * d, 0.0);
        linear_bwd(bt.xh1.data(), w + blk.wq, dq.data(), dxh1.data(), blk.wq, blk.bq, d, d);
        linear_bwd(bt.xh1.data(), w + blk.wk, dk.data(), dxh1.data(), blk.wk, blk.bk, d, d);
        linear_bwd(bt.xh1.data(), w + blk.wv, dv.data(), dxh1.data(), blk.wv, blk.bv, d, d);

        std::vector<double> dx_in = dx2; // residual into the block input
        rms_bwd(bt.x_in.data(), w + blk.rms1_g, bt.r1.data(), dxh1.data(), dx_in.data(), blk.rms1_g);
        dx = std::move(dx_in);
    }

    // input encoders + positional embeddings
    for (int l = 0; l < L; ++l) {
        const double* dxr = dx.data() + static_cast<size_t>(l) * d;
        const SeqPos& p = seq[static_cast<size_t>(l)];
        for (int i = 0; i < d; ++i) {
            g[lay.pos_emb + static_cast<size_t>(l) * d + i] += dxr[i];
        }
        switch (p.kind) {
            case InputKind::Token:
                for (int i = 0; i < d; ++i) {
                    g[lay.tok_emb + static_cast<size_t>(p.token) * d + i] += dxr[i];
                }
                break;
            case InputKind::Obs:
                for (int i = 0; i < cfg.obs_dim; ++i) {
                    double f = p.feat[static_cast<size_t>(i)];
                    if (f == 0.0) {
                        continue;
                    }
                    for (int j = 0; j < d; ++j) {
                        g[lay.obs_w + static_cast<size_t>(i) * d + j] += f * dxr[j];
                    }
                }
                for (int j = 0; j < d; ++j) {
                    g[lay.obs_b + static_cast<size_t>(j)] += dxr[j];
                }
                break;
            case InputKind::Evid:
                for (int i = 0; i < cfg.evid_dim; ++i) {
                    double f = p.feat[static_cast<size_t>(i)];
                    if (f == 0.0) {
                        continue;
                    }
                    for (int j = 0; j < d; ++j) {
                        g[lay.evid_w + static_cast<size_t>(i) * d + j] += f * dxr[j];
                    }
                }
                for (int j = 0; j < d; ++j) {
                    g[lay.evid_b + static_cast<size_t>(j)] += dxr[j];
                }
                break;
            case InputKind::Proprio:
                for (int i = 0; i < cfg.proprio_dim; ++i) {
                    double f = p.feat[static_cast<size_t>(i)];
                    if (f == 0.0) {
                        continue;
                    }
                    for (int j = 0; j < d; ++j) {
                        g[lay.prop_w + static_cast<size_t>(i) * d + j] += f * dxr[j];
                    }
                }
                for (int j = 0; j < d; ++j) {
                    g[lay.prop_b + static_cast<size_t>(j)] += dxr[j];
                }
                break;
            case InputKind::ActionQuery:
                for (int i = 0; i < d; ++i) {
                    g[lay.act_query + static_cast<size_t>(i)] += dxr[i];
                }
                break;
        }
    }

    for (double v : grad) {
        if (!std::isfinite(v)) {
            throw NumericalFault("non-finite gradient");
        }
    }
}

// ---------------------------------------------------------------------------
// distributions, log-probabilities, sampling
// ---------------------------------------------------------------------------

/// Full-vocabulary softmax of one logits row.
inline std::vector<double> softmax_row(const double* logits, int V, double temperature = 1.0) {
    std::vector<double> p(static_cast<size_t>(V));
    double mx = -1e300;
    for (int v = 0; v < V; ++v) {
        mx = std::max(mx, logits[v] / temperature);
    }
    double z = 0.0;
    for (int v = 0; v < V; ++v) {
        p[static_cast<size_t>(v)] = std::exp(logits[v] / temperature - mx);
        z += p[static_cast<size_t>(v)];
    }
    for (auto& x : p) {
        x /= z;
    }
    return p;
}

/// Softmax restricted to the action sub-vocabulary; indexed by primitive.
inline std::vector<double> action_softmax_row(const double* logits, const std::vector<int>& action_ids,
                                              double temperature = 1.0) {
    std::vector<double> p(action_ids.size());
    double mx = -1e300;
    for (size_t i = 0; i < action_ids.size(); ++i) {
        mx = std::max(mx, logits[action_ids[i]] / temperature);
    }
    double z = 0.0;
    for (size_t i = 0; i < action_ids.size(); ++i) {
        p[i] = std::exp(logits[action_ids[i]] / temperature - mx);
        z += p[i];
    }
    for (auto& x : p) {
        x /= z;
    }
    return p;
}

struct LogProbResult {
    double total = 0.0;
    std::vector<double> per_token; // one entry per generated position, in order
};

/// Exact log-likelihood of the generated tokens in a sequence: full softmax
/// at reasoning positions (position l predicts the token at l+1), restricted
/// action softmax at slot positions (predicting their own token).
inline LogProbResult sequence_logprob(const PolicyParams& params, const PolicySequence& seq) {
    Tape tape = forward(params, seq);
    const int V = params.cfg.vocab_size;
    LogProbResult out;
    for (int l = 0; l < tape.L; ++l) {
        const SeqPos& p = seq[static_cast<size_t>(l)];
        if (p.target < 0) {
            continue;
        }
        const double* row = tape.logits.data() + static_cast<size_t>(l) * V;
        double lp;
        if (p.slot) {
            auto probs = action_softmax_row(row, params.cfg.action_token_ids);
            int idx = -1;
            for (size_t i = 0; i < params.cfg.action_token_ids.size(); ++i) {
                if (params.cfg.action_token_ids[i] == p.target) {
                    idx = static_cast<int>(i);
                }
            }
            lp = std::log(probs[static_cast<size_t>(idx)]);
        } else {
            auto probs = softmax_row(row, V);
            lp = std::log(probs[static_cast<size_t>(p.target)]);
        }
        out.per_token.push_back(lp);
        out.total += lp;
    }
    return out;
}

enum class DecodeMode : uint8_t { Greedy, Temperature };

/// Draws one token index from a distribution by inverse CDF. Greedy picks the
/// first maximum. Deterministic given the rng state.
inline int sample_index(const std::vector<double>& probs, DecodeMode mode, Rng& rng) {
    if (mode == DecodeMode::Greedy) {
        int best = 0;
        for (size_t i = 1; i < probs.size(); ++i) {
            if (probs[i] > probs[best]) {
                best = static_cast<int>(i);
            }
        }
        return best;
    }
    double u = rng.next_double();
    double c = 0.0;
    for (size_t i = 0; i < probs.size(); ++i) {
        c += probs[i];
        if (u < c) {
            return static_cast<int>(i);
        }
    }
    return static_cast<int>(probs.size()) - 1;
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'Z', 'V', 'L', 'A', 'C', 'K', 'P', 'T'};
inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void save_checkpoint(const std::string& path, const PolicyParams& params, uint64_t config_hash) {
    std::string blob;
    blob.reserve(32 + params.w.size() * 8);
    blob.append(kCheckpointMagic, 8);
    auto put_u32 = [&](uint32_t v) {
        for (int i = 0; i < 4; ++i) {
            blob.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
        }
    };
    auto put_u64 = [&](uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            blob.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
        }
    };
    put_u32(kCheckpointVersion);
    put_u64(config_hash);
    put_u64(params.w.size());
    for (double x : params.w) {
        uint64_t bits;
        std::memcpy(&bits, &x, 8);
        put_u64(bits);
    }
    write_text_file(path, blob);
}

/// Loads parameters into a freshly-configured PolicyParams. If expect_hash is
/// nonzero it must match the stored config hash.
inline PolicyParams load_checkpoint(const std::string& path, const PolicyConfig& cfg,
                                    uint64_t expect_hash = 0) {
    std::string blob = read_text_file(path);
    if (blob.size() < 28 || std::memcmp(blob.data(), kCheckpointMagic, 8) != 0) {
        throw IoError("not a checkpoint file: " + path);
    }
    size_t at = 8;
    auto get_u32 = [&]() {
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<uint32_t>(static_cast<unsigned char>(blob[at++])) << (8 * i);
        }
        return v;
    };
    auto get_u64 = [&]() {
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<uint64_t>(static_cast<unsigned char>(blob[at++])) << (8 * i);
        }
        return v;
    };
    uint32_t version = get_u32();
    if (version != kCheckpointVersion) {
        throw IoError("unsupported checkpoint version");
    }
    uint64_t stored_hash = get_u64();
    if (expect_hash != 0 && stored_hash != expect_hash) {
        throw CheckpointMismatch("checkpoint config hash mismatch");
    }
    uint64_t count = get_u64();
    PolicyParams params = PolicyParams::zeros(cfg);
    if (count != params.w.size()) {
        throw CheckpointMismatch("checkpoint parameter count mismatch");
    }
    for (size_t i = 0; i < count; ++i) {
        uint64_t bits = get_u64();
        double x;
        std::memcpy(&x, &bits, 8);
        params.w[i] = x;
    }
    return params;
}

} // namespace zoomvla
