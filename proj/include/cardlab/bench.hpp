#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "cardlab/featurize.hpp"
#include "cardlab/model.hpp"
#include "cardlab/oracle.hpp"
#include "cardlab/workload.hpp"

namespace cardlab {

// max(T/P, P/T); callers clamp cardinalities to >= 1 first.
inline double q_error(double estimate, double true_card) {
    if (!(estimate > 0.0) || !(true_card > 0.0))
        throw NonPositiveError("q_error needs positive cardinalities");
    return std::max(true_card / estimate, estimate / true_card);
}

inline double clamp_card(double c) { return std::max(1.0, c); }

struct EstimateContext {
    const SubQuery& query;
    const DbStates& live_states;
    double true_card = 0.0;  // only the Optimal pseudo-estimator may read this
};

class Estimator {
public:
    virtual ~Estimator() = default;
    virtual std::string name() const = 0;

    // called once, at the training/evaluation boundary
    virtual void build(const Schema&, const RowStore&, const DbStates&) {}

    virtual double estimate(const EstimateContext& ctx) = 0;
};

// --- baselines -----------------------------------------------------------------

class OptimalEstimator : public Estimator {
public:
    std::string name() const override { return "optimal"; }
    double estimate(const EstimateContext& ctx) override { return clamp_card(ctx.true_card); }
};

// Frozen per-attribute 1-D histograms with attribute-independence and the
// distinct-count join formula |R >< S| = |R|*|S| / max(V(A,R), V(B,S)).
class PgIndepEstimator : public Estimator {
public:
    explicit PgIndepEstimator(std::size_t bins = 100) : bins_(bins) {}

    std::string name() const override { return "pg"; }

    void build(const Schema& schema, const RowStore& store, const DbStates&) override {
        schema_ = &schema;
        row_counts_.assign(schema.relation_count(), 0.0);
        const auto order = schema.global_order();
        hist_.assign(order.size(), {});
        distinct_.assign(order.size(), 1.0);
        for (std::size_t t = 0; t < order.size(); ++t) {
            const AttrRef ref = order[t];
            const auto& rel = store.relation(ref.rel);
            row_counts_[ref.rel] = static_cast<double>(rel.size());
            hist_[t].partition = equal_width_partition(schema.attribute(ref), bins_);
            hist_[t].counts.assign(bins_, 0.0);
            std::vector<double> values;
            values.reserve(rel.size());
            for (const auto& row : rel.rows()) {
                hist_[t].counts[hist_[t].partition.locate(row.values[ref.attr])] += 1.0;
                values.push_back(row.values[ref.attr]);
            }
            std::sort(values.begin(), values.end());
            distinct_[t] = static_cast<double>(
                std::unique(values.begin(), values.end()) - values.begin());
            if (distinct_[t] < 1.0) distinct_[t] = 1.0;
        }
        built_ = true;
    }

    double estimate(const EstimateContext& ctx) override {
        if (!built_) throw Error("pg estimator used before build");
        const SubQuery& q = ctx.query;

        // per-relation size after filters, independence across attributes
        std::vector<double> size_of(schema_->relation_count(), 0.0);
        for (std::uint32_t rel : q.relations) {
            double size = row_counts_[rel];
            const auto& rd = schema_->relation(rel);
            for (std::uint32_t a = 0; a < rd.attributes.size(); ++a) {
                auto iv = filter_interval(*schema_, q, {rel, a});
                if (!iv) continue;
                size *= interval_selectivity(schema_->global_index({rel, a}), *iv);
            }
            size_of[rel] = size;
        }
        if (q.single()) return clamp_card(size_of[q.relations[0]]);

        // fold canonical join predicates left to right
        std::vector<char> joined(schema_->relation_count(), 0);
        double size = 0.0;
        bool started = false;
        for (const auto& j : q.joins) {
            const double v = std::max(distinct_[schema_->global_index(j.lhs)],
                                      distinct_[schema_->global_index(j.rhs)]);
            const bool l = joined[j.lhs.rel], r = joined[j.rhs.rel];
            if (!started) {
                size = size_of[j.lhs.rel] * size_of[j.rhs.rel] / v;
                started = true;
            } else if (l && r) {
                size /= v;
            } else {
                const std::uint32_t fresh = l ? j.rhs.rel : j.lhs.rel;
                size *= size_of[fresh] / v;
            }
            joined[j.lhs.rel] = joined[j.rhs.rel] = 1;
        }
        return clamp_card(size);
    }

private:
    struct Histogram {
        BinPartition partition;
        std::vector<double> counts;
    };

    double interval_selectivity(std::size_t t, const FilterInterval& iv) const {
        const auto& h = hist_[t];
        double total = 0.0, covered = 0.0;
        for (std::size_t b = 0; b < h.counts.size(); ++b) {
            total += h.counts[b];
            const double lo = h.partition.edges[b], hi = h.partition.edges[b + 1];
            const double olo = std::max(lo, iv.lb), ohi = std::min(hi, iv.ub);
            if (ohi > olo) covered += h.counts[b] * (ohi - olo) / (hi - lo);
        }
        return total > 0.0 ? covered / total : 0.0;
    }

    std::size_t bins_;
    const Schema* schema_ = nullptr;
    bool built_ = false;
    std::vector<double> row_counts_;
    std::vector<Histogram> hist_;
    std::vector<double> distinct_;
};

// Uniform per-relation samples of ratio p; estimates scale the sample count
// by p^-m for the m involved relations.
class UniSampEstimator : public Estimator {
public:
    UniSampEstimator(double p, std::uint64_t seed) : p_(p), seed_(seed) {
        if (!(p > 0.0 && p <= 1.0)) throw Error("sampling ratio must lie in (0, 1]");
    }

    std::string name() const override { return "unisamp"; }

    void build(const Schema& schema, const RowStore& store, const DbStates&) override {
        schema_ = &schema;
        samples_ = RowStore(schema);
        Rng rng(seed_);
        for (std::uint32_t r = 0; r < schema.relation_count(); ++r) {
            const auto& rows = store.relation(r).rows();
            const std::size_t want = static_cast<std::size_t>(
                std::ceil(p_ * static_cast<double>(rows.size())));
            std::vector<std::size_t> idx(rows.size());
            std::iota(idx.begin(), idx.end(), 0);
            rng.shuffle(idx);
            for (std::size_t i = 0; i < want; ++i)
                apply_statement(schema, samples_, InsertStmt{r, rows[idx[i]].values});
        }
        built_ = true;
    }

    double estimate(const EstimateContext& ctx) override {
        if (!built_) throw Error("unisamp estimator used before build");
        const auto n = hash_join_count(*schema_, samples_, ctx.query);
        const double m = static_cast<double>(ctx.query.relations.size());
        return static_cast<double>(n) / std::pow(p_, m);
    }

    const RowStore& samples() const { return samples_; }

private:
    double p_;
    std::uint64_t seed_;
    const Schema* schema_ = nullptr;
    bool built_ = false;
    RowStore samples_;
};

// A trained model behind the estimator interface; reads the live DB states.
class ModelEstimator : public Estimator {
public:
    ModelEstimator(std::string name, const CardModel& model, const QueryFeaturizer& featurizer)
        : name_(std::move(name)), model_(&model), featurizer_(&featurizer) {}

    std::string name() const override { return name_; }

    double estimate(const EstimateContext& ctx) override {
        ad::Tensor states(ctx.live_states.attribute_count(), ctx.live_states.bins(),
                          ctx.live_states.matrix());
        const auto feat = featurizer_->featurize(ctx.query).full();
        ad::Tensor query(1, feat.size(), feat);
        return model_->estimate(states, query);
    }

private:
    std::string name_;
    const CardModel* model_;
    const QueryFeaturizer* featurizer_;
};

// --- evaluation ------------------------------------------------------------------

struct SubQueryRecord {
    std::uint64_t ordinal = 0;
    bool single = false;
    std::string sql;
    double true_card = 0.0;  // raw oracle count
    double estimate = 0.0;   // raw estimator output
    double q_err = 1.0;      // over clamped cardinalities
};

struct EstimatorReport {
    std::string estimator;
    std::vector<SubQueryRecord> rows;
    double build_seconds = 0.0;
    double mean_latency_ms = 0.0;

    bool empty() const { return rows.empty(); }

    std::vector<double> sorted_q_errors() const {
        std::vector<double> q;
        q.reserve(rows.size());
        for (const auto& r : rows) q.push_back(r.q_err);
        std::sort(q.begin(), q.end());
        return q;
    }

    // nearest-rank quantile over the sorted q-errors, p in (0, 1]
    double quantile(double p) const {
        if (rows.empty()) throw Error("quantile of an empty report");
        const auto q = sorted_q_errors();
        std::size_t rank = static_cast<std::size_t>(
            std::ceil(p * static_cast<double>(q.size())));
        rank = std::clamp<std::size_t>(rank, 1, q.size());
        return q[rank - 1];
    }
};

// Replays the workload, builds the estimator at the boundary, and scores it on
// every evaluation-part sub-query against the oracle.
inline EstimatorReport evaluate_estimator(const Schema& schema, const WorkloadScript& script,
                                          std::size_t d_x, BinMode bin_mode,
                                          Estimator& estimator) {
    EstimatorReport report;
    report.estimator = estimator.name();
    double latency_total_ms = 0.0;
    std::size_t latency_count = 0;

    ReplaySinks sinks;
    sinks.on_boundary = [&](const RowStore& store, const DbStates& states) {
        const auto t0 = std::chrono::steady_clock::now();
        estimator.build(schema, store, states);
        report.build_seconds = std::chrono::duration<double>(
                                   std::chrono::steady_clock::now() - t0)
                                   .count();
    };
    sinks.on_pack = [&](const PackEvent& ev, const DbStates& states) {
        if (!ev.evaluation) return;
        for (std::size_t s = 0; s < ev.pack->sub_queries.size(); ++s) {
            const SubQuery& sq = ev.pack->sub_queries[s];
            EstimateContext ctx{sq, states, static_cast<double>(ev.true_cards[s])};
            const auto t0 = std::chrono::steady_clock::now();
            const double est = estimator.estimate(ctx);
            latency_total_ms += std::chrono::duration<double, std::milli>(
                                    std::chrono::steady_clock::now() - t0)
                                    .count();
            ++latency_count;
            SubQueryRecord rec;
            rec.ordinal = ev.pack->ordinal;
            rec.single = sq.single();
            rec.sql = to_sql(schema, sq);
            rec.true_card = ctx.true_card;
            rec.estimate = est;
            rec.q_err = q_error(clamp_card(est), clamp_card(ctx.true_card));
            report.rows.push_back(std::move(rec));
        }
    };
    replay(schema, script, d_x, bin_mode, sinks);
    if (latency_count > 0)
        report.mean_latency_ms = latency_total_ms / static_cast<double>(latency_count);
    return report;
}

// --- reporting -------------------------------------------------------------------

inline void write_report_csv(std::ostream& out, const EstimatorReport& report) {
    out << "ordinal,kind,true_card,estimate,q_error\n";
    for (const auto& r : report.rows)
        out << r.ordinal << "," << (r.single ? "single" : "join") << ","
            << format_number(r.true_card) << "," << format_number(r.estimate) << ","
            << format_number(r.q_err) << "\n";
}

inline void write_report_summary(std::ostream& out, const std::vector<EstimatorReport>& reports) {
    out << "estimator      n       50%        90%        95%        99%\n";
    for (const auto& rep : reports) {
        char line[160];
        if (rep.empty()) {
            std::snprintf(line, sizeof(line), "%-12s %5zu %9s %10s %10s %10s\n",
                          rep.estimator.c_str(), rep.rows.size(), "n/a", "n/a", "n/a", "n/a");
        } else {
            std::snprintf(line, sizeof(line), "%-12s %5zu %9.3f %10.3f %10.3f %10.3f\n",
                          rep.estimator.c_str(), rep.rows.size(), rep.quantile(0.50),
                          rep.quantile(0.90), rep.quantile(0.95), rep.quantile(0.99));
        }
        out << line;
    }
}

// round half up, floor 1: optimizers consume row counts
inline long long estimate_as_integer(double est) {
    return std::max(1ll, static_cast<long long>(std::floor(est + 0.5)));
}

// Estimate files: one `<query ordinal> <estimate>` line per sub-query in
// stream order, split into single-relation and join files, with parallel
// `*_sub_queries.txt` files carrying the SQL text.
inline void emit_estimate_files(const EstimatorReport& report, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream single_cards(fs::path(dir) / "single_cards.txt");
    std::ofstream join_cards(fs::path(dir) / "join_cards.txt");
    std::ofstream single_sql(fs::path(dir) / "single_sub_queries.txt");
    std::ofstream join_sql(fs::path(dir) / "join_sub_queries.txt");
    if (!single_cards || !join_cards || !single_sql || !join_sql)
        throw IoError("cannot write estimate files in " + dir);
    for (const auto& r : report.rows) {
        std::ostream& cards = r.single ? single_cards : join_cards;
        std::ostream& sql = r.single ? single_sql : join_sql;
        cards << r.ordinal << " " << estimate_as_integer(r.estimate) << "\n";
        sql << r.ordinal << " " << r.sql << "\n";
    }
    if (!single_cards || !join_cards || !single_sql || !join_sql)
        throw IoError("short write on estimate files in " + dir);
}

struct EstimateLine {
    std::uint64_t ordinal = 0;
    long long estimate = 0;
};

inline std::vector<EstimateLine> parse_estimate_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open estimate file: " + path);
    std::vector<EstimateLine> lines;
    EstimateLine l;
    while (in >> l.ordinal >> l.estimate) lines.push_back(l);
    return lines;
}

}  // namespace cardlab
