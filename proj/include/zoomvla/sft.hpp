#pragma once

// Cold-start supervised fine-tuning: token-level cross-entropy over the
// synthesized dataset under the hybrid mask (causal reasoning positions,
// bidirectional action blocks), AdamW updates, deterministic shuffling.

#include <string>
#include <vector>

#include "cot.hpp"
#include "optim.hpp"
#include "policy.hpp"
#include "rng.hpp"
#include "util.hpp"

namespace zoomvla {

struct SftConfig {
    int batch_size = 64;
    double learning_rate = 1e-3; // full-scale counterpart: 1e-5
    int epochs = 60;
    double weight_decay = 1e-4;
    uint64_t seed = 0;
    int max_records = 0; // 0 = use the whole dataset
};

struct LossReport {
    int epoch = 0;
    double loss_total = 0.0;
    double loss_cot = 0.0;
    double loss_action = 0.0;
    double grad_norm = 0.0;
};

struct BatchLoss {
    double total = 0.0, cot = 0.0, action = 0.0;
    int cot_tokens = 0, action_tokens = 0;
};

struct LossMask {
    bool include_cot = true;
    bool include_action = true;
};

/// Mean token cross-entropy over the batch's generated positions, split into
/// reasoning and action components; gradients accumulate into *grad when
/// given. The mean is over whichever positions the mask includes.
inline BatchLoss masked_loss(const PolicyParams& params,
                             const std::vector<const TrainingItem*>& batch,
                             GradBuffer* grad, const LossMask& mask = {}) {
    const int V = params.cfg.vocab_size;
    BatchLoss out;
    long included = 0;
    for (const TrainingItem* item : batch) {
        for (const auto& p : item->seq) {
            if (p.target < 0) {
                continue;
            }
            bool is_action = p.slot;
            out.cot_tokens += !is_action;
            out.action_tokens += is_action;
            included += (is_action ? mask.include_action : mask.include_cot) ? 1 : 0;
        }
    }
    if (included == 0) {
        return out;
    }
    const double inv = 1.0 / static_cast<double>(included);

    for (const TrainingItem* item : batch) {
        const PolicySequence& seq = item->seq;
        Tape tape = forward(params, seq);
        std::vector<double> dl(static_cast<size_t>(tape.L) * V, 0.0);
        bool any = false;
        for (int l = 0; l < tape.L; ++l) {
            const SeqPos& p = seq[static_cast<size_t>(l)];
            if (p.target < 0) {
                continue;
            }
            const double* row = tape.logits.data() + static_cast<size_t>(l) * V;
            double* out_row = dl.data() + static_cast<size_t>(l) * V;
            if (p.slot) {
                auto probs = action_softmax_row(row, params.cfg.action_token_ids);
                double lp = 0.0;
                for (size_t i = 0; i < params.cfg.action_token_ids.size(); ++i) {
                    if (params.cfg.action_token_ids[i] == p.target) {
                        lp = std::log(probs[i]);
                    }
                }
                out.action += -lp;
                if (mask.include_action) {
                    any = true;
                    for (size_t i = 0; i < params.cfg.action_token_ids.size(); ++i) {
                        int id = params.cfg.action_token_ids[i];
                        out_row[id] += (probs[i] - (id == p.target ? 1.0 : 0.0)) * inv;
                    }
                }
            } else {
                auto probs = softmax_row(row, V);
                out.cot += -std::log(probs[static_cast<size_t>(p.target)]);
                if (mask.include_cot) {
                    any = true;
                    for (int v = 0; v < V; ++v) {
                        out_row[v] += (probs[static_cast<size_t>(v)] -
                                       (v == p.target ? 1.0 : 0.0)) * inv;
                    }
                }
            }
        }
        if (grad && any) {
            backward(params, seq, tape, dl, *grad);
        }
    }

    double sum = (mask.include_cot ? out.cot : 0.0) + (mask.include_action ? out.action : 0.0);
    out.total = sum * inv;
    out.cot = out.cot_tokens ? out.cot / out.cot_tokens : 0.0;
    out.action = out.action_tokens ? out.action / out.action_tokens : 0.0;
    if (!std::isfinite(out.total)) {
        throw NumericalFault("non-finite SFT loss");
    }
    return out;
}

struct SftResult {
    PolicyParams params;
    std::vector<LossReport> reports;
    bool aborted = false;
};

/// Deterministic corpus cap that drops whole demonstrations, never single
/// frames: records stay grouped by (task, seed), low seeds first, tasks
/// interleaved. Partial demos would break the on-path state coverage the
/// policy imitates.
inline std::vector<CotRecord> subsample_records(const std::vector<CotRecord>& records,
                                                int max_records) {
    if (max_records <= 0 || static_cast<int>(records.size()) <= max_records) {
        return records;
    }
    struct Group {
        uint64_t seed;
        size_t order; // original position of the group's first record
        std::vector<const CotRecord*> recs;
    };
    std::vector<Group> groups;
    for (size_t i = 0; i < records.size(); ++i) {
        if (groups.empty() || groups.back().recs.back()->task_id != records[i].task_id ||
            groups.back().seed != records[i].demo_seed) {
            groups.push_back(Group{records[i].demo_seed, i, {}});
        }
        groups.back().recs.push_back(&records[i]);
    }
    std::stable_sort(groups.begin(), groups.end(), [](const Group& a, const Group& b) {
        return a.seed != b.seed ? a.seed < b.seed : a.order < b.order;
    });
    std::vector<CotRecord> out;
    for (const auto& g : groups) {
        if (out.size() + g.recs.size() > static_cast<size_t>(max_records)) {
            break;
        }
        for (const CotRecord* r : g.recs) {
            out.push_back(*r);
        }
    }
    return out;
}

/// Full training run. On a numerical fault the last healthy parameters are
/// returned with aborted = true.
inline SftResult train_sft(PolicyParams params, const std::vector<TrainingItem>& items,
                           const SftConfig& cfg) {
    SftResult result{params, {}, false};
    if (items.empty()) {
        throw ValidationAbort("SFT dataset is empty");
    }
    AdamW opt(AdamWConfig{cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay}, params.w.size());
    std::vector<size_t> order(items.size());
    for (size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng = substream(cfg.seed, "sft-shuffle", static_cast<uint64_t>(epoch));
        shuffle_rng.shuffle(order);
        double ep_loss = 0.0, ep_cot = 0.0, ep_act = 0.0, ep_gnorm = 0.0;
        int batches = 0;
        std::vector<double> epoch_start = result.params.w;
        try {
            for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg.batch_size)) {
                std::vector<const TrainingItem*> batch;
                for (size_t i = at; i < std::min(order.size(), at + static_cast<size_t>(cfg.batch_size)); ++i) {
                    batch.push_back(&items[order[i]]);
                }
                GradBuffer grad(result.params.w.size(), 0.0);
                BatchLoss loss = masked_loss(result.params, batch, &grad);
                opt.step(result.params.w, grad);
                ep_loss += loss.total;
                ep_cot += loss.cot;
                ep_act += loss.action;
                ep_gnorm += l2_norm(grad);
                ++batches;
            }
        } catch (const NumericalFault&) {
            result.params.w = std::move(epoch_start); // retain the last good checkpoint
            result.aborted = true;
            break;
        }
        LossReport rep;
        rep.epoch = epoch;
        rep.loss_total = ep_loss / batches;
        rep.loss_cot = ep_cot / batches;
        rep.loss_action = ep_act / batches;
        rep.grad_norm = ep_gnorm / batches;
        result.reports.push_back(rep);
    }
    return result;
}

inline std::string loss_reports_csv(const std::vector<LossReport>& reports) {
    std::string out = "epoch,loss_total,loss_cot,loss_action,grad_norm\n";
    for (const auto& r : reports) {
        out += std::to_string(r.epoch) + "," + format_double(r.loss_total) + "," +
               format_double(r.loss_cot) + "," + format_double(r.loss_action) + "," +
               format_double(r.grad_norm) + "\n";
    }
    return out;
}

} // namespace zoomvla
