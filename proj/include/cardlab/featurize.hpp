#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cardlab/errors.hpp"
#include "cardlab/states.hpp"
#include "cardlab/subquery.hpp"

namespace cardlab {

enum class JoinFeatVariant {
    Full,    // each present pattern contributes its 2m-bit attribute encoding
    Simple,  // one presence bit per pattern
};

inline JoinFeatVariant join_variant_from_string(const std::string& s) {
    if (s == "full") return JoinFeatVariant::Full;
    if (s == "simple") return JoinFeatVariant::Simple;
    throw Error("unknown join featurization variant: " + s);
}

inline const char* to_string(JoinFeatVariant v) {
    return v == JoinFeatVariant::Full ? "full" : "simple";
}

struct QueryFeat {
    std::vector<double> join_vec;
    std::vector<double> filter_vec;        // (l_k, u_k) pairs in global attribute order
    std::vector<std::size_t> empty_attrs;  // attrs whose filter intersection is empty

    bool empty_range() const { return !empty_attrs.empty(); }

    std::vector<double> full() const {
        std::vector<double> v;
        v.reserve(join_vec.size() + filter_vec.size());
        v.insert(v.end(), join_vec.begin(), join_vec.end());
        v.insert(v.end(), filter_vec.begin(), filter_vec.end());
        return v;
    }
};

// Fixed-width, lossless featurization of counting queries against one schema.
//
// The join-pattern universe is derived from the schema's join graph, closed
// under equivalence-class rewriting: any connected subset of a class can show
// up as a canonical chain, so every sorted-consecutive pair of such a subset
// is a pattern of its own.
class QueryFeaturizer {
public:
    explicit QueryFeaturizer(const Schema& schema,
                             JoinFeatVariant variant = JoinFeatVariant::Full)
        : schema_(&schema), variant_(variant) {
        build_pattern_table();
    }

    const Schema& schema() const { return *schema_; }
    JoinFeatVariant variant() const { return variant_; }
    const std::vector<JoinPattern>& patterns() const { return patterns_; }

    std::size_t pattern_count() const { return patterns_.size(); }
    std::size_t code_bits() const { return schema_->code_bits(); }

    std::size_t join_width() const {
        return variant_ == JoinFeatVariant::Full ? 2 * code_bits() * patterns_.size()
                                                 : patterns_.size();
    }
    std::size_t filter_width() const { return 2 * schema_->total_attributes(); }
    std::size_t query_width() const { return join_width() + filter_width(); }

    // Bits of one attribute id: relation id then attribute id, most
    // significant bit first, both 1-based.
    std::vector<double> attr_code_bits(AttrRef ref) const {
        std::vector<double> bits(code_bits(), 0.0);
        std::uint32_t code = schema_->attr_code(ref);
        for (std::size_t i = 0; i < bits.size(); ++i)
            bits[bits.size() - 1 - i] = static_cast<double>((code >> i) & 1u);
        return bits;
    }

    std::vector<double> featurize_joins(const std::vector<JoinPattern>& joins) const {
        auto canonical = canonicalize_joins(*schema_, joins);
        std::vector<double> vec(join_width(), 0.0);
        for (const auto& j : canonical) {
            std::size_t idx = pattern_index(j);
            if (variant_ == JoinFeatVariant::Simple) {
                vec[idx] = 1.0;
            } else {
                const std::size_t m = code_bits();
                auto left = attr_code_bits(j.lhs);
                auto right = attr_code_bits(j.rhs);
                std::copy(left.begin(), left.end(), vec.begin() + idx * 2 * m);
                std::copy(right.begin(), right.end(), vec.begin() + idx * 2 * m + m);
            }
        }
        return vec;
    }

    // Per attribute, the conjunction of filters folded into one [l, u)
    // normalized by the domain hull. Unconstrained attributes get (0, 1);
    // an empty intersection collapses to a zero-width pair and is flagged.
    std::pair<std::vector<double>, std::vector<std::size_t>> featurize_filters(
        const SubQuery& q) const {
        auto order = schema_->global_order();
        std::vector<double> vec(2 * order.size());
        std::vector<std::size_t> empties;
        for (std::size_t k = 0; k < order.size(); ++k) {
            auto iv = filter_interval(*schema_, q, order[k]);
            double lo = 0.0, hi = 1.0;
            if (iv) {
                const auto& att = schema_->attribute(order[k]);
                const double l = att.hull_low(), w = att.hull_width();
                lo = std::clamp((iv->lb - l) / w, 0.0, 1.0);
                hi = std::clamp((iv->ub - l) / w, 0.0, 1.0);
                if (lo >= hi) {
                    empties.push_back(k);
                    hi = lo;
                }
            }
            vec[2 * k] = lo;
            vec[2 * k + 1] = hi;
        }
        return {std::move(vec), std::move(empties)};
    }

    QueryFeat featurize(const SubQuery& q) const {
        QueryFeat f;
        f.join_vec = featurize_joins(q.joins);
        auto [fv, empties] = featurize_filters(q);
        f.filter_vec = std::move(fv);
        f.empty_attrs = std::move(empties);
        return f;
    }

private:
    std::size_t pattern_index(const JoinPattern& p) const {
        auto it = std::lower_bound(
            patterns_.begin(), patterns_.end(), p, [this](const JoinPattern& a, const JoinPattern& b) {
                return std::pair(schema_->attr_code(a.lhs), schema_->attr_code(a.rhs)) <
                       std::pair(schema_->attr_code(b.lhs), schema_->attr_code(b.rhs));
            });
        if (it == patterns_.end() || !(*it == p))
            throw UnknownJoinPatternError("join predicate " + schema_->attr_name(p.lhs) + " = " +
                                          schema_->attr_name(p.rhs) +
                                          " is outside the schema's join pattern universe");
        return static_cast<std::size_t>(it - patterns_.begin());
    }

    void build_pattern_table() {
        // maximal equivalence classes of the declared join graph
        std::map<std::uint32_t, AttrRef> by_code;
        std::map<std::uint32_t, std::uint32_t> parent;
        for (const auto& j : schema_->join_graph()) {
            by_code.emplace(schema_->attr_code(j.lhs), j.lhs);
            by_code.emplace(schema_->attr_code(j.rhs), j.rhs);
        }
        for (const auto& [c, r] : by_code) parent[c] = c;
        auto find = [&](std::uint32_t x) {
            while (parent[x] != x) x = parent[x] = parent[parent[x]];
            return x;
        };
        for (const auto& j : schema_->join_graph()) {
            std::uint32_t a = find(schema_->attr_code(j.lhs));
            std::uint32_t b = find(schema_->attr_code(j.rhs));
            if (a != b) parent[std::max(a, b)] = std::min(a, b);
        }
        std::map<std::uint32_t, std::vector<AttrRef>> classes;
        for (const auto& [c, r] : by_code) classes[find(c)].push_back(r);

        std::vector<JoinPattern> table;
        for (const auto& [root, members] : classes) {
            const std::size_t t = members.size();
            if (t > 20)
                throw Error("join equivalence class too large to enumerate (" +
                            std::to_string(t) + " attributes)");
            // declared edges within the class, as member-index pairs
            std::vector<std::pair<std::size_t, std::size_t>> edges;
            for (const auto& j : schema_->join_graph()) {
                auto pos = [&](AttrRef ref) -> int {
                    auto it = std::find(members.begin(), members.end(), ref);
                    return it == members.end() ? -1 : static_cast<int>(it - members.begin());
                };
                int a = pos(j.lhs), b = pos(j.rhs);
                if (a >= 0 && b >= 0) edges.push_back({std::size_t(a), std::size_t(b)});
            }
            // every connected subset's sorted-consecutive pairs are reachable
            for (std::uint64_t mask = 1; mask < (1ull << t); ++mask) {
                if (std::popcount(mask) < 2) continue;
                if (!subset_connected(mask, edges)) continue;
                int prev = -1;
                for (std::size_t i = 0; i < t; ++i) {
                    if (!(mask & (1ull << i))) continue;
                    if (prev >= 0) {
                        JoinPattern p{members[prev], members[i]};
                        if (std::find(table.begin(), table.end(), p) == table.end())
                            table.push_back(p);
                    }
                    prev = static_cast<int>(i);
                }
            }
        }
        std::sort(table.begin(), table.end(), [this](const JoinPattern& a, const JoinPattern& b) {
            return std::pair(schema_->attr_code(a.lhs), schema_->attr_code(a.rhs)) <
                   std::pair(schema_->attr_code(b.lhs), schema_->attr_code(b.rhs));
        });
        patterns_ = std::move(table);
    }

    static bool subset_connected(std::uint64_t mask,
                                 const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
        std::uint64_t reached = mask & (~mask + 1);  // lowest set bit
        bool grew = true;
        while (grew) {
            grew = false;
            for (const auto& [a, b] : edges) {
                std::uint64_t ba = 1ull << a, bb = 1ull << b;
                if (!(mask & ba) || !(mask & bb)) continue;
                if ((reached & ba) && !(reached & bb)) reached |= bb, grew = true;
                if ((reached & bb) && !(reached & ba)) reached |= ba, grew = true;
            }
        }
        return reached == mask;
    }

    const Schema* schema_;
    JoinFeatVariant variant_;
    std::vector<JoinPattern> patterns_;
};

}  // namespace cardlab
