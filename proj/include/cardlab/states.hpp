#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <istream>
#include <ostream>
#include <sstream>
#include <vector>

#include "cardlab/errors.hpp"
#include "cardlab/store.hpp"
#include "cardlab/text.hpp"

namespace cardlab {

enum class BinMode { EqualWidth, EqualDepth };

inline const char* to_string(BinMode m) {
    return m == BinMode::EqualWidth ? "equal-width" : "equal-depth";
}

// Half-open partition of one attribute's domain hull into d_x bins.
struct BinPartition {
    BinMode mode = BinMode::EqualWidth;
    std::vector<double> edges;  // d_x + 1 strictly increasing, edges[0]=l, edges[d_x]=u

    std::size_t bins() const { return edges.size() - 1; }

    // Bin containing v; values outside the hull clamp to the boundary bins.
    std::size_t locate(double v, bool* clamped = nullptr) const {
        if (v < edges.front() || v >= edges.back()) {
            if (clamped) *clamped = true;
            return v < edges.front() ? 0 : bins() - 1;
        }
        auto it = std::upper_bound(edges.begin(), edges.end(), v);
        std::size_t idx = static_cast<std::size_t>(it - edges.begin()) - 1;
        return std::min(idx, bins() - 1);
    }
};

inline BinPartition equal_width_partition(const AttributeDef& att, std::size_t d_x) {
    const double l = att.hull_low(), u = att.hull_high();
    if (!(l < u)) throw EmptyDomainError("degenerate domain for attribute " + att.name);
    BinPartition p;
    p.mode = BinMode::EqualWidth;
    p.edges.resize(d_x + 1);
    const double a = (u - l) / static_cast<double>(d_x);
    for (std::size_t j = 0; j <= d_x; ++j) p.edges[j] = l + a * static_cast<double>(j);
    p.edges[0] = l;
    p.edges[d_x] = u;
    for (std::size_t j = 1; j <= d_x; ++j)
        if (!(p.edges[j] > p.edges[j - 1]))
            throw EmptyDomainError("domain of " + att.name + " too narrow for " +
                                   std::to_string(d_x) + " bins");
    return p;
}

// Quantile edges computed once from the initial values and then frozen.
inline BinPartition equal_depth_partition(const AttributeDef& att, std::size_t d_x,
                                          std::vector<double> values) {
    if (values.empty())
        throw EmptyDomainError("equal-depth binning needs initial data for " + att.name);
    std::sort(values.begin(), values.end());
    const double l = att.hull_low(), u = att.hull_high();
    // duplicate quantiles separate by a sliver; the empty bins this creates
    // are harmless
    const double min_step = (u - l) * 1e-12;

    BinPartition p;
    p.mode = BinMode::EqualDepth;
    p.edges.resize(d_x + 1);
    p.edges[0] = l;
    p.edges[d_x] = u;
    for (std::size_t j = 1; j < d_x; ++j) {
        std::size_t rank = j * values.size() / d_x;
        p.edges[j] = values[std::min(rank, values.size() - 1)];
    }
    // enforce strict monotonicity without leaving the hull
    for (std::size_t j = 1; j < d_x; ++j)
        p.edges[j] = std::max(p.edges[j], p.edges[j - 1] + min_step);
    for (std::size_t j = d_x; j-- > 1;)
        p.edges[j] = std::min(p.edges[j], p.edges[j + 1] - min_step);
    for (std::size_t j = 1; j <= d_x; ++j)
        if (!(p.edges[j] > p.edges[j - 1]))
            throw EmptyDomainError("domain of " + att.name + " too narrow for " +
                                   std::to_string(d_x) + " equal-depth bins");
    return p;
}

// Which bins one statement touched; at most two entries per affected attribute.
struct BinChange {
    std::size_t attr_index;  // global attribute index
    std::size_t bin;
    std::int64_t delta;
};

// The featurized database: one fixed-width histogram per attribute, kept in
// exact sync with the row store through statement deltas. Copies are
// independent snapshots.
class DbStates {
public:
    DbStates() = default;

    static DbStates build(const Schema& schema, const RowStore& store, std::size_t d_x,
                          BinMode mode) {
        if (d_x < 1) throw Error("d_x must be at least 1");
        DbStates st;
        st.d_x_ = d_x;
        st.attrs_ = schema.global_order();
        st.attr_rel_.reserve(st.attrs_.size());
        for (const auto& ref : st.attrs_) st.attr_rel_.push_back(ref.rel);

        st.partitions_.reserve(st.attrs_.size());
        for (const auto& ref : st.attrs_) {
            const auto& att = schema.attribute(ref);
            if (mode == BinMode::EqualWidth) {
                st.partitions_.push_back(equal_width_partition(att, d_x));
            } else {
                std::vector<double> vals;
                vals.reserve(store.relation(ref.rel).size());
                for (const auto& row : store.relation(ref.rel).rows())
                    vals.push_back(row.values[ref.attr]);
                st.partitions_.push_back(equal_depth_partition(att, d_x, std::move(vals)));
            }
        }

        st.normalizers_.resize(schema.relation_count());
        for (std::uint32_t r = 0; r < schema.relation_count(); ++r)
            st.normalizers_[r] =
                2.0 * static_cast<double>(std::max<std::size_t>(1, store.relation(r).size()));

        st.raw_.assign(st.attrs_.size(), std::vector<std::int64_t>(d_x, 0));
        st.scaled_.assign(st.attrs_.size(), std::vector<double>(d_x, 0.0));
        // one pass over every relation
        for (std::size_t t = 0; t < st.attrs_.size(); ++t) {
            const auto ref = st.attrs_[t];
            for (const auto& row : store.relation(ref.rel).rows())
                st.raw_[t][st.partitions_[t].locate(row.values[ref.attr])] += 1;
            for (std::size_t j = 0; j < d_x; ++j)
                st.scaled_[t][j] =
                    static_cast<double>(st.raw_[t][j]) / st.normalizers_[ref.rel];
        }
        return st;
    }

    std::size_t attribute_count() const { return attrs_.size(); }
    std::size_t bins() const { return d_x_; }
    const std::vector<AttrRef>& attribute_order() const { return attrs_; }
    const BinPartition& partition(std::size_t t) const { return partitions_[t]; }
    const std::vector<std::int64_t>& raw_counts(std::size_t t) const { return raw_[t]; }
    const std::vector<double>& scaled(std::size_t t) const { return scaled_[t]; }
    double normalizer(std::uint32_t rel) const { return normalizers_[rel]; }

    std::int64_t row_count(std::size_t t) const {
        std::int64_t n = 0;
        for (auto c : raw_[t]) n += c;
        return n;
    }

    // Applies one statement delta in O(touched bins); returns the changes.
    std::vector<BinChange> update(const Schema& schema, const StatementDelta& delta) {
        std::vector<BinChange> changes;
        auto bump = [&](std::uint32_t rel, std::uint32_t attr, double value, std::int64_t d) {
            std::size_t t = schema.global_index({rel, attr});
            bool clamped = false;
            std::size_t bin = partitions_[t].locate(value, &clamped);
            if (clamped)
                std::cerr << "[cardlab] warning: value " << value << " for "
                          << schema.attr_name({rel, attr}) << " outside recorded bin range, clamped\n";
            raw_[t][bin] += d;
            if (raw_[t][bin] < 0)
                throw NegativeCountError("histogram bin for " + schema.attr_name({rel, attr}) +
                                         " went negative; states out of sync");
            scaled_[t][bin] = static_cast<double>(raw_[t][bin]) / normalizers_[rel];
            changes.push_back({t, bin, d});
        };

        switch (delta.kind) {
            case DmlKind::Insert:
                for (std::uint32_t a = 0; a < delta.new_values.size(); ++a)
                    bump(delta.rel, a, delta.new_values[a], +1);
                break;
            case DmlKind::Delete:
                for (std::uint32_t a = 0; a < delta.old_values.size(); ++a)
                    bump(delta.rel, a, delta.old_values[a], -1);
                break;
            case DmlKind::Update: {
                std::size_t t = schema.global_index({delta.rel, delta.attr});
                std::size_t from = partitions_[t].locate(delta.old_values[0]);
                std::size_t to = partitions_[t].locate(delta.new_values[0]);
                if (from == to) break;  // same-bin move, nothing changes
                bump(delta.rel, delta.attr, delta.old_values[0], -1);
                bump(delta.rel, delta.attr, delta.new_values[0], +1);
                break;
            }
        }
        return changes;
    }

    // The scaled T x d_x matrix fed to the estimator, row-major.
    std::vector<double> matrix() const {
        std::vector<double> m;
        m.reserve(attrs_.size() * d_x_);
        for (const auto& row : scaled_) m.insert(m.end(), row.begin(), row.end());
        return m;
    }

    friend bool operator==(const DbStates& a, const DbStates& b) {
        return a.d_x_ == b.d_x_ && a.raw_ == b.raw_ && a.scaled_ == b.scaled_ &&
               a.normalizers_ == b.normalizers_;
    }

    void dump(std::ostream& out) const {
        out << "states v1\n";
        out << attrs_.size() << " " << d_x_ << "\n";
        out << "normalizers";
        for (double n : normalizers_) out << " " << format_number(n);
        out << "\n";
        for (std::size_t t = 0; t < attrs_.size(); ++t) {
            out << "attr " << attrs_[t].rel << " " << attrs_[t].attr << " "
                << (partitions_[t].mode == BinMode::EqualWidth ? "w" : "d");
            for (double e : partitions_[t].edges) out << " " << format_number(e);
            out << "\n";
        }
        for (std::size_t t = 0; t < attrs_.size(); ++t) {
            for (std::size_t j = 0; j < d_x_; ++j) out << (j ? " " : "") << raw_[t][j];
            out << "\n";
        }
    }

    static DbStates load(std::istream& in) {
        DbStates st;
        std::string tag, ver;
        in >> tag >> ver;
        if (tag != "states" || ver != "v1") throw IoError("bad states header");
        std::size_t t_count = 0;
        in >> t_count >> st.d_x_;
        in >> tag;
        if (tag != "normalizers") throw IoError("bad states file: missing normalizers");
        std::string line;
        std::getline(in, line);
        {
            std::istringstream ls(line);
            double v;
            while (ls >> v) st.normalizers_.push_back(v);
        }
        st.attrs_.resize(t_count);
        st.partitions_.resize(t_count);
        for (std::size_t t = 0; t < t_count; ++t) {
            std::string mode;
            in >> tag >> st.attrs_[t].rel >> st.attrs_[t].attr >> mode;
            if (tag != "attr") throw IoError("bad states file: missing attr record");
            st.partitions_[t].mode = mode == "w" ? BinMode::EqualWidth : BinMode::EqualDepth;
            std::getline(in, line);
            std::istringstream ls(line);
            double e;
            while (ls >> e) st.partitions_[t].edges.push_back(e);
            if (st.partitions_[t].edges.size() != st.d_x_ + 1)
                throw IoError("bad states file: edge count");
            st.attr_rel_.push_back(st.attrs_[t].rel);
        }
        st.raw_.assign(t_count, std::vector<std::int64_t>(st.d_x_, 0));
        st.scaled_.assign(t_count, std::vector<double>(st.d_x_, 0.0));
        for (std::size_t t = 0; t < t_count; ++t)
            for (std::size_t j = 0; j < st.d_x_; ++j) {
                if (!(in >> st.raw_[t][j])) throw IoError("bad states file: counts");
                st.scaled_[t][j] = static_cast<double>(st.raw_[t][j]) /
                                   st.normalizers_[st.attrs_[t].rel];
            }
        return st;
    }

private:
    std::size_t d_x_ = 0;
    std::vector<AttrRef> attrs_;
    std::vector<std::uint32_t> attr_rel_;
    std::vector<BinPartition> partitions_;
    std::vector<double> normalizers_;  // per relation
    std::vector<std::vector<std::int64_t>> raw_;
    std::vector<std::vector<double>> scaled_;
};

}  // namespace cardlab
