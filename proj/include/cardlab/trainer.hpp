#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "cardlab/model.hpp"
#include "cardlab/rng.hpp"
#include "cardlab/states.hpp"
#include "cardlab/text.hpp"

namespace cardlab {

struct TrainingSample {
    std::uint32_t snapshot = 0;  // index into the snapshot pool
    std::vector<double> query;   // d_q featurization
    double label_log_card = 0.0; // ln(max(true cardinality, 1))
};

inline double log_card_label(std::uint64_t card) {
    return std::log(static_cast<double>(std::max<std::uint64_t>(1, card)));
}

struct TrainConfig {
    std::size_t max_epochs = 200;
    std::size_t batch_size = 128;
    double learning_rate = 0.01;
    std::size_t patience = 10;
    double validation_fraction = 0.1;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
};

// Per-batch sample weights proportional to the log-cardinality labels,
// normalized to sum to one. A batch of all-zero labels falls back to uniform.
inline std::vector<double> compute_weights(const std::vector<double>& labels) {
    std::vector<double> w(labels.size());
    double total = 0.0;
    for (double l : labels) total += l;
    if (total <= 0.0) {
        std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(labels.size()));
    } else {
        for (std::size_t i = 0; i < labels.size(); ++i) w[i] = labels[i] / total;
    }
    return w;
}

// (1/B) sum_i w_i (p_i - y_i)^2, the scalar counterpart of the tape op.
inline double mwse_loss(const std::vector<double>& preds, const std::vector<double>& labels,
                        const std::vector<double>& weights) {
    if (preds.size() != labels.size() || preds.size() != weights.size())
        throw ShapeMismatchError("mwse_loss length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double d = preds[i] - labels[i];
        s += weights[i] * d * d;
    }
    return s / static_cast<double>(preds.size());
}

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct TrainOutcome {
    std::vector<EpochStats> history;
    double best_val_loss = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;  // 1-based; 0 = never evaluated
    bool stopped_early = false;
};

class Trainer {
public:
    Trainer(CardModel& model, const std::vector<ad::Tensor>& snapshots,
            const std::vector<TrainingSample>& samples, TrainConfig cfg)
        : model_(&model), snapshots_(&snapshots), samples_(&samples), cfg_(cfg) {
        if (cfg_.batch_size < 1) throw Error("batch size must be at least 1");
        if (!(cfg_.validation_fraction > 0.0 && cfg_.validation_fraction < 1.0))
            throw Error("validation fraction must lie in (0, 1)");
        query_tensors_.reserve(samples.size());
        for (const auto& s : samples)
            query_tensors_.emplace_back(1, s.query.size(), s.query);
        split();
    }

    const std::vector<std::size_t>& train_indices() const { return train_idx_; }
    const std::vector<std::size_t>& validation_indices() const { return val_idx_; }

    // One pass over the training split: shuffle, batch, MWSE + Adam.
    double train_epoch(ad::AdamState& adam, std::size_t epoch) {
        Rng rng = Rng(cfg_.seed).fork(1000 + epoch);
        std::vector<std::size_t> order = train_idx_;
        rng.shuffle(order);

        auto grads = model_->params().zeros_like();
        double loss_sum = 0.0;
        for (std::size_t begin = 0; begin < order.size(); begin += cfg_.batch_size) {
            const std::size_t end = std::min(order.size(), begin + cfg_.batch_size);
            std::vector<std::size_t> batch(order.begin() + begin, order.begin() + end);

            std::vector<double> labels(batch.size());
            for (std::size_t i = 0; i < batch.size(); ++i)
                labels[i] = (*samples_)[batch[i]].label_log_card;
            const std::vector<double> weights = compute_weights(labels);

            ad::zero_grads(grads);
            const double batch_loss = run_batch(batch, weights, &grads);
            adam.step(model_->params(), grads, ad::AdamConfig{.lr = cfg_.learning_rate});
            loss_sum += batch_loss * static_cast<double>(batch.size());
        }
        return order.empty() ? 0.0 : loss_sum / static_cast<double>(order.size());
    }

    // MWSE over the whole validation split, forward only.
    double validation_loss() {
        if (val_idx_.empty()) return 0.0;
        std::vector<double> labels(val_idx_.size());
        for (std::size_t i = 0; i < val_idx_.size(); ++i)
            labels[i] = (*samples_)[val_idx_[i]].label_log_card;
        const std::vector<double> weights = compute_weights(labels);
        return run_batch(val_idx_, weights, nullptr);
    }

    // Algorithm: up to max_epochs passes, track validation MWSE, keep the
    // best parameters, stop after `patience` non-improving evaluations.
    TrainOutcome run(std::ostream* log = nullptr) {
        TrainOutcome out;
        ad::AdamState adam(model_->params());
        std::vector<ad::Tensor> best;
        std::size_t bad_epochs = 0;
        for (std::size_t epoch = 1; epoch <= cfg_.max_epochs; ++epoch) {
            const double train_loss = train_epoch(adam, epoch);
            const double val_loss = validation_loss();
            out.history.push_back({epoch, train_loss, val_loss});
            if (log)
                (*log) << "epoch " << epoch << " train " << train_loss << " val " << val_loss
                       << "\n";
            if (val_loss < out.best_val_loss) {
                out.best_val_loss = val_loss;
                out.best_epoch = epoch;
                bad_epochs = 0;
                best.clear();
                for (std::size_t p = 0; p < model_->params().count(); ++p)
                    best.push_back(model_->params().tensor(p));
            } else if (++bad_epochs >= cfg_.patience) {
                out.stopped_early = true;
                break;
            }
        }
        if (!best.empty())
            for (std::size_t p = 0; p < best.size(); ++p)
                model_->params().tensor(p) = std::move(best[p]);
        return out;
    }

private:
    struct Group {
        std::uint32_t snapshot = 0;
        std::vector<std::size_t> members;  // positions within the batch
    };

    // Consecutive samples sharing a snapshot run on one tape so the shared
    // DB-state encoding is computed once.
    std::vector<Group> group_by_snapshot(const std::vector<std::size_t>& batch) const {
        std::vector<Group> groups;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const std::uint32_t snap = (*samples_)[batch[i]].snapshot;
            bool found = false;
            for (auto& g : groups)
                if (g.snapshot == snap) {
                    g.members.push_back(i);
                    found = true;
                    break;
                }
            if (!found) groups.push_back({snap, {i}});
        }
        return groups;
    }

    // Forward (and optionally backward) one batch; returns the batch MWSE.
    // Gradients accumulate in sample order within each thread chunk and chunks
    // reduce in thread order, so results are reproducible for a fixed
    // (seed, threads) pair.
    double run_batch(const std::vector<std::size_t>& batch, const std::vector<double>& weights,
                     std::vector<ad::Tensor>* grads) {
        const std::vector<Group> groups = group_by_snapshot(batch);
        const double batch_n = static_cast<double>(batch.size());
        const std::size_t thread_count =
            std::max<std::size_t>(1, std::min(cfg_.threads, groups.size()));

        std::vector<double> group_losses(groups.size(), 0.0);
        std::vector<std::vector<ad::Tensor>> chunk_grads;
        if (grads)
            for (std::size_t t = 0; t < thread_count; ++t)
                chunk_grads.push_back(model_->params().zeros_like());

        auto work = [&](std::size_t tid, std::size_t lo, std::size_t hi) {
            for (std::size_t gi = lo; gi < hi; ++gi) {
                const Group& g = groups[gi];
                ad::Tape tape(&model_->params());
                std::vector<const ad::Tensor*> queries;
                queries.reserve(g.members.size());
                for (std::size_t m : g.members) queries.push_back(&query_tensors_[batch[m]]);
                std::vector<ad::Tape::Id> preds;
                preds.reserve(queries.size());
                model_->forward_batch(tape, (*snapshots_)[g.snapshot], queries, preds);

                ad::Tape::Id loss = 0;
                for (std::size_t k = 0; k < preds.size(); ++k) {
                    const std::size_t m = g.members[k];
                    auto l = tape.mwse(preds[k],
                                       ad::Tensor::scalar((*samples_)[batch[m]].label_log_card),
                                       ad::Tensor::scalar(weights[m]));
                    loss = (k == 0) ? l : tape.add(loss, l);
                }
                group_losses[gi] = tape.value(loss).item();
                if (grads) tape.backward(loss, chunk_grads[tid], 1.0 / batch_n);
            }
        };

        if (thread_count == 1) {
            work(0, 0, groups.size());
        } else {
            std::vector<std::thread> pool;
            const std::size_t per = (groups.size() + thread_count - 1) / thread_count;
            for (std::size_t t = 0; t < thread_count; ++t) {
                const std::size_t lo = t * per;
                const std::size_t hi = std::min(groups.size(), lo + per);
                if (lo < hi) pool.emplace_back(work, t, lo, hi);
            }
            for (auto& th : pool) th.join();
        }

        if (grads)
            for (std::size_t t = 0; t < thread_count; ++t)
                for (std::size_t p = 0; p < grads->size(); ++p)
                    for (std::size_t i = 0; i < (*grads)[p].size(); ++i)
                        (*grads)[p].data[i] += chunk_grads[t][p].data[i];

        double total = 0.0;
        for (double l : group_losses) total += l;
        return total / batch_n;
    }

    void split() {
        const std::size_t n = samples_->size();
        if (n == 0) throw Error("no training samples");
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        Rng rng = Rng(cfg_.seed).fork(1);
        rng.shuffle(order);
        std::size_t n_val =
            n < 2 ? 0
                  : std::clamp<std::size_t>(
                        static_cast<std::size_t>(std::llround(cfg_.validation_fraction *
                                                              static_cast<double>(n))),
                        1, n - 1);
        val_idx_.assign(order.begin(), order.begin() + n_val);
        train_idx_.assign(order.begin() + n_val, order.end());
    }

    CardModel* model_;
    const std::vector<ad::Tensor>* snapshots_;
    const std::vector<TrainingSample>* samples_;
    TrainConfig cfg_;
    std::vector<ad::Tensor> query_tensors_;
    std::vector<std::size_t> train_idx_;
    std::vector<std::size_t> val_idx_;
};

// --- sample/snapshot persistence ------------------------------------------------

inline void dump_samples(std::ostream& out, const std::vector<TrainingSample>& samples,
                         std::size_t d_q) {
    out << "samples v1\n" << samples.size() << " " << d_q << "\n";
    for (const auto& s : samples) {
        out << s.snapshot << " " << format_number(s.label_log_card);
        for (double v : s.query) out << " " << format_number(v);
        out << "\n";
    }
}

inline std::vector<TrainingSample> load_samples(std::istream& in, std::size_t* d_q_out = nullptr) {
    std::string tag, ver;
    in >> tag >> ver;
    if (tag != "samples" || ver != "v1") throw IoError("bad samples header");
    std::size_t count = 0, d_q = 0;
    in >> count >> d_q;
    if (d_q_out) *d_q_out = d_q;
    std::vector<TrainingSample> samples(count);
    for (auto& s : samples) {
        in >> s.snapshot >> s.label_log_card;
        s.query.resize(d_q);
        for (double& v : s.query)
            if (!(in >> v)) throw IoError("truncated samples file");
    }
    return samples;
}

inline void dump_snapshot_pool(std::ostream& out, const std::vector<DbStates>& pool) {
    out << "snapshot-pool v1\n" << pool.size() << "\n";
    for (const auto& st : pool) st.dump(out);
}

inline std::vector<DbStates> load_snapshot_pool(std::istream& in) {
    std::string tag, ver;
    in >> tag >> ver;
    if (tag != "snapshot-pool" || ver != "v1") throw IoError("bad snapshot pool header");
    std::size_t count = 0;
    in >> count;
    std::vector<DbStates> pool;
    pool.reserve(count);
    for (std::size_t i = 0; i < count; ++i) pool.push_back(DbStates::load(in));
    return pool;
}

inline std::vector<ad::Tensor> snapshot_matrices(const std::vector<DbStates>& pool) {
    std::vector<ad::Tensor> out;
    out.reserve(pool.size());
    for (const auto& st : pool)
        out.emplace_back(st.attribute_count(), st.bins(), st.matrix());
    return out;
}

inline void write_history_csv(std::ostream& out, const std::vector<EpochStats>& history) {
    out << "epoch,train_loss,val_loss\n";
    for (const auto& e : history)
        out << e.epoch << "," << format_number(e.train_loss) << "," << format_number(e.val_loss)
            << "\n";
}

}  // namespace cardlab
