#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <unordered_map>
#include <vector>

#include "cardlab/store.hpp"
#include "cardlab/subquery.hpp"

namespace cardlab {

namespace detail {

// Row indices per relation that survive the query's filters.
inline std::vector<std::vector<std::uint32_t>> filtered_rows(const Schema& schema,
                                                             const RowStore& store,
                                                             const SubQuery& q) {
    std::vector<std::vector<std::uint32_t>> out(q.relations.size());
    for (std::size_t i = 0; i < q.relations.size(); ++i) {
        std::uint32_t rel = q.relations[i];
        const auto& rows = store.relation(rel).rows();
        out[i].reserve(rows.size());
        for (std::uint32_t pos = 0; pos < rows.size(); ++pos) {
            bool keep = true;
            for (const auto& f : q.filters) {
                if (f.attr.rel != rel) continue;
                if (!f.matches(rows[pos].values[f.attr.attr])) {
                    keep = false;
                    break;
                }
            }
            if (keep) out[i].push_back(pos);
        }
    }
    return out;
}

inline int relation_slot(const SubQuery& q, std::uint32_t rel) {
    auto it = std::find(q.relations.begin(), q.relations.end(), rel);
    return it == q.relations.end() ? -1 : static_cast<int>(it - q.relations.begin());
}

struct DoubleVecHash {
    std::size_t operator()(const std::vector<double>& v) const {
        std::size_t h = 1469598103934665603ull;
        for (double d : v) {
            const double norm = (d == 0.0) ? 0.0 : d;  // -0.0 must hash like +0.0
            std::uint64_t bits;
            std::memcpy(&bits, &norm, sizeof(bits));
            h ^= bits;
            h *= 1099511628211ull;
        }
        return h;
    }
};

}  // namespace detail

inline bool connected(const SubQuery& q) {
    if (q.relations.empty()) return false;
    if (q.relations.size() == 1) return true;
    std::vector<char> seen(q.relations.size(), 0);
    std::vector<std::size_t> stack{0};
    seen[0] = 1;
    while (!stack.empty()) {
        std::size_t cur = stack.back();
        stack.pop_back();
        for (const auto& j : q.joins) {
            int a = detail::relation_slot(q, j.lhs.rel);
            int b = detail::relation_slot(q, j.rhs.rel);
            if (a < 0 || b < 0) continue;
            if (static_cast<std::size_t>(a) == cur && !seen[b]) seen[b] = 1, stack.push_back(b);
            if (static_cast<std::size_t>(b) == cur && !seen[a]) seen[a] = 1, stack.push_back(a);
        }
    }
    return std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; });
}

// Exact COUNT(*) by nested-loop evaluation; the reference implementation.
// Filters are applied per relation up front, join predicates as soon as both
// sides are bound.
inline std::uint64_t true_cardinality(const Schema& schema, const RowStore& store,
                                      const SubQuery& q) {
    auto candidates = detail::filtered_rows(schema, store, q);
    const std::size_t n = q.relations.size();

    // join predicates checkable once relation slot `s` binds
    std::vector<std::vector<JoinPattern>> checks(n);
    for (const auto& j : q.joins) {
        int a = detail::relation_slot(q, j.lhs.rel);
        int b = detail::relation_slot(q, j.rhs.rel);
        checks[static_cast<std::size_t>(std::max(a, b))].push_back(j);
    }

    std::vector<const Row*> bound(n, nullptr);
    std::uint64_t count = 0;
    auto value_of = [&](AttrRef ref) {
        return bound[detail::relation_slot(q, ref.rel)]->values[ref.attr];
    };

    std::vector<std::size_t> cursor(n, 0);
    std::size_t depth = 0;
    while (true) {
        if (cursor[depth] >= candidates[depth].size()) {
            if (depth == 0) break;
            cursor[depth] = 0;
            --depth;
            ++cursor[depth];
            continue;
        }
        const auto& rows = store.relation(q.relations[depth]).rows();
        bound[depth] = &rows[candidates[depth][cursor[depth]]];
        bool ok = true;
        for (const auto& j : checks[depth]) {
            if (value_of(j.lhs) != value_of(j.rhs)) {
                ok = false;
                break;
            }
        }
        if (!ok) {
            ++cursor[depth];
        } else if (depth + 1 == n) {
            ++count;
            ++cursor[depth];
        } else {
            ++depth;
        }
    }
    return count;
}

// Exact COUNT(*) by folding relations into a hash table of join-key
// multiplicities. Independent of the nested-loop path; also the fast
// evaluator used during workload replay.
inline std::uint64_t hash_join_count(const Schema& schema, const RowStore& store,
                                     const SubQuery& q) {
    auto candidates = detail::filtered_rows(schema, store, q);
    const std::size_t n = q.relations.size();
    if (n == 1) return candidates[0].size();

    // fold order: smallest relation index first, then any relation joined to
    // the processed set
    std::vector<char> processed(n, 0);
    std::vector<std::size_t> order{0};
    processed[0] = 1;
    while (order.size() < n) {
        bool advanced = false;
        for (std::size_t s = 0; s < n && !advanced; ++s) {
            if (processed[s]) continue;
            for (const auto& j : q.joins) {
                int a = detail::relation_slot(q, j.lhs.rel);
                int b = detail::relation_slot(q, j.rhs.rel);
                if ((static_cast<std::size_t>(a) == s && processed[b]) ||
                    (static_cast<std::size_t>(b) == s && processed[a])) {
                    order.push_back(s);
                    processed[s] = 1;
                    advanced = true;
                    break;
                }
            }
        }
        if (!advanced) throw Error("hash_join_count requires a connected query");
    }

    // attributes of the processed set still needed by pending join predicates
    auto interface_attrs = [&](std::size_t upto) {
        std::vector<AttrRef> attrs;
        for (const auto& j : q.joins) {
            std::size_t a = detail::relation_slot(q, j.lhs.rel);
            std::size_t b = detail::relation_slot(q, j.rhs.rel);
            auto pos_a = std::find(order.begin(), order.end(), a) - order.begin();
            auto pos_b = std::find(order.begin(), order.end(), b) - order.begin();
            if (pos_a > pos_b) std::swap(pos_a, pos_b);
            // predicate crosses the boundary after step `upto`
            if (pos_a <= static_cast<long>(upto) && pos_b > static_cast<long>(upto)) {
                AttrRef ref = (std::find(order.begin(), order.begin() + upto + 1,
                                         static_cast<std::size_t>(detail::relation_slot(
                                             q, j.lhs.rel))) != order.begin() + upto + 1)
                                  ? j.lhs
                                  : j.rhs;
                if (std::find(attrs.begin(), attrs.end(), ref) == attrs.end()) attrs.push_back(ref);
            }
        }
        std::sort(attrs.begin(), attrs.end());
        return attrs;
    };

    using KeyMap = std::unordered_map<std::vector<double>, std::uint64_t, detail::DoubleVecHash>;

    auto row_values = [&](std::size_t slot, std::uint32_t pos) -> const Tuple& {
        return store.relation(q.relations[slot]).rows()[pos].values;
    };

    // seed with the first relation
    std::vector<AttrRef> iface = interface_attrs(0);
    KeyMap state;
    for (std::uint32_t pos : candidates[order[0]]) {
        std::vector<double> key;
        key.reserve(iface.size());
        for (const auto& ref : iface) key.push_back(row_values(order[0], pos)[ref.attr]);
        state[key] += 1;
    }

    for (std::size_t step = 1; step < n; ++step) {
        std::size_t slot = order[step];
        std::uint32_t rel = q.relations[slot];

        // predicates linking the new relation to the processed interface
        struct Link {
            std::size_t iface_pos;   // index into current interface tuple
            std::uint32_t new_attr;  // attribute of the incoming relation
        };
        std::vector<Link> links;
        for (const auto& j : q.joins) {
            std::size_t a = detail::relation_slot(q, j.lhs.rel);
            std::size_t b = detail::relation_slot(q, j.rhs.rel);
            AttrRef old_ref, new_ref;
            if (a == slot && std::find(order.begin(), order.begin() + step, b) != order.begin() + step)
                new_ref = j.lhs, old_ref = j.rhs;
            else if (b == slot &&
                     std::find(order.begin(), order.begin() + step, a) != order.begin() + step)
                new_ref = j.rhs, old_ref = j.lhs;
            else
                continue;
            std::size_t ipos = std::find(iface.begin(), iface.end(), old_ref) - iface.begin();
            links.push_back({ipos, new_ref.attr});
        }

        // bucket processed counts by the attrs the new relation matches on
        KeyMap buckets;
        for (const auto& [key, cnt] : state) {
            std::vector<double> probe;
            probe.reserve(links.size());
            for (const auto& lk : links) probe.push_back(key[lk.iface_pos]);
            buckets[probe] += cnt;
        }
        // carry forward attrs still needed after this step
        std::vector<AttrRef> next_iface = interface_attrs(step);
        struct Carry {
            bool from_new;
            std::size_t idx;  // iface_pos or attribute index
        };
        std::vector<Carry> carries;
        for (const auto& ref : next_iface) {
            auto it = std::find(iface.begin(), iface.end(), ref);
            if (it != iface.end())
                carries.push_back({false, static_cast<std::size_t>(it - iface.begin())});
            else
                carries.push_back({true, ref.attr});
        }

        // the old-side carry needs the full old key, so bucket by probe AND
        // group counts per surviving old-key projection
        KeyMap next_state;
        if (std::none_of(carries.begin(), carries.end(), [](const Carry& c) { return !c.from_new; })) {
            // old interface fully dropped: probe buckets are enough
            for (std::uint32_t pos : candidates[slot]) {
                const Tuple& vals = row_values(slot, pos);
                std::vector<double> probe;
                probe.reserve(links.size());
                for (const auto& lk : links) probe.push_back(vals[lk.new_attr]);
                auto hit = buckets.find(probe);
                if (hit == buckets.end()) continue;
                std::vector<double> key;
                key.reserve(carries.size());
                for (const auto& c : carries) key.push_back(vals[c.idx]);
                next_state[key] += hit->second;
            }
        } else {
            // group new-relation rows by probe key first
            std::unordered_map<std::vector<double>, std::vector<std::uint32_t>,
                               detail::DoubleVecHash>
                new_by_probe;
            for (std::uint32_t pos : candidates[slot]) {
                const Tuple& vals = row_values(slot, pos);
                std::vector<double> probe;
                probe.reserve(links.size());
                for (const auto& lk : links) probe.push_back(vals[lk.new_attr]);
                new_by_probe[probe].push_back(pos);
            }
            for (const auto& [key, cnt] : state) {
                std::vector<double> probe;
                probe.reserve(links.size());
                for (const auto& lk : links) probe.push_back(key[lk.iface_pos]);
                auto hit = new_by_probe.find(probe);
                if (hit == new_by_probe.end()) continue;
                for (std::uint32_t pos : hit->second) {
                    const Tuple& vals = row_values(slot, pos);
                    std::vector<double> nk;
                    nk.reserve(carries.size());
                    for (const auto& c : carries)
                        nk.push_back(c.from_new ? vals[c.idx] : key[c.idx]);
                    next_state[nk] += cnt;
                }
            }
        }
        state = std::move(next_state);
        iface = std::move(next_iface);
    }

    std::uint64_t total = 0;
    for (const auto& [key, cnt] : state) total += cnt;
    return total;
}

// All counting sub-queries a plan enumerator would ask about: one per
// connected, non-empty relation subset, with the induced joins and filters.
// Joins are canonicalized first; order is ascending by relation-id bitmask.
inline std::vector<SubQuery> enumerate_sub_queries(const Schema& schema, const SubQuery& query) {
    SubQuery q = canonicalized(schema, query);
    const std::size_t n = q.relations.size();
    std::vector<SubQuery> out;
    for (std::uint64_t mask = 1; mask < (1ull << n); ++mask) {
        SubQuery sub;
        for (std::size_t i = 0; i < n; ++i)
            if (mask & (1ull << i)) sub.relations.push_back(q.relations[i]);
        auto in_sub = [&](std::uint32_t rel) {
            return std::find(sub.relations.begin(), sub.relations.end(), rel) !=
                   sub.relations.end();
        };
        for (const auto& j : q.joins)
            if (in_sub(j.lhs.rel) && in_sub(j.rhs.rel)) sub.joins.push_back(j);
        if (!connected(sub)) continue;
        for (const auto& f : q.filters)
            if (in_sub(f.attr.rel)) sub.filters.push_back(f);
        out.push_back(std::move(sub));
    }
    std::sort(out.begin(), out.end(), [](const SubQuery& a, const SubQuery& b) {
        return a.relation_mask() < b.relation_mask();
    });
    return out;
}

}  // namespace cardlab
