#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "cardlab/errors.hpp"
#include "cardlab/schema.hpp"
#include "cardlab/text.hpp"

namespace cardlab {

enum class CmpOp { Lt, Le, Gt, Ge, Eq };

inline const char* to_string(CmpOp op) {
    switch (op) {
        case CmpOp::Lt: return "<";
        case CmpOp::Le: return "<=";
        case CmpOp::Gt: return ">";
        case CmpOp::Ge: return ">=";
        case CmpOp::Eq: return "=";
    }
    return "?";
}

struct FilterPredicate {
    AttrRef attr;
    CmpOp op = CmpOp::Eq;
    double constant = 0.0;

    bool matches(double v) const {
        switch (op) {
            case CmpOp::Lt: return v < constant;
            case CmpOp::Le: return v <= constant;
            case CmpOp::Gt: return v > constant;
            case CmpOp::Ge: return v >= constant;
            case CmpOp::Eq: return v == constant;
        }
        return false;
    }
};

// A counting query over a connected subset of relations with induced
// equi-join predicates and conjunctive filters.
struct SubQuery {
    std::vector<std::uint32_t> relations;  // sorted schema indices, no duplicates
    std::vector<JoinPattern> joins;
    std::vector<FilterPredicate> filters;

    bool single() const { return relations.size() == 1; }

    std::uint64_t relation_mask() const {
        std::uint64_t m = 0;
        for (auto r : relations) m |= 1ull << r;
        return m;
    }
};

// --- join canonicalization --------------------------------------------------

// Rewrites a join set into its canonical form: union-find over equalities,
// then each equivalence class (members sorted by attribute code) becomes the
// chain lhs_1 = lhs_2, lhs_2 = lhs_3, ...
inline std::vector<JoinPattern> canonicalize_joins(const Schema& schema,
                                                   const std::vector<JoinPattern>& joins) {
    std::map<std::uint32_t, AttrRef> by_code;
    for (const auto& j : joins) {
        by_code.emplace(schema.attr_code(j.lhs), j.lhs);
        by_code.emplace(schema.attr_code(j.rhs), j.rhs);
    }
    std::map<std::uint32_t, std::uint32_t> parent;
    for (const auto& [code, ref] : by_code) parent[code] = code;
    auto find = [&](std::uint32_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (const auto& j : joins) {
        std::uint32_t a = find(schema.attr_code(j.lhs));
        std::uint32_t b = find(schema.attr_code(j.rhs));
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
    std::map<std::uint32_t, std::vector<AttrRef>> classes;  // root -> sorted members
    for (const auto& [code, ref] : by_code) classes[find(code)].push_back(ref);

    std::vector<JoinPattern> out;
    for (const auto& [root, members] : classes)
        for (std::size_t i = 0; i + 1 < members.size(); ++i)
            out.push_back({members[i], members[i + 1]});
    // classes iterate by root code and members are code-sorted, so the result
    // is already in canonical order
    return out;
}

// Every predicate must reference a relation that takes part in the query.
inline void validate(const Schema& schema, const SubQuery& q) {
    auto has_rel = [&](std::uint32_t r) {
        return std::find(q.relations.begin(), q.relations.end(), r) != q.relations.end();
    };
    for (const auto& f : q.filters)
        if (!has_rel(f.attr.rel))
            throw Error("filter references relation outside query: " + schema.attr_name(f.attr));
    for (const auto& j : q.joins)
        if (!has_rel(j.lhs.rel) || !has_rel(j.rhs.rel))
            throw Error("join references relation outside query");
}

inline SubQuery canonicalized(const Schema& schema, SubQuery q) {
    std::sort(q.relations.begin(), q.relations.end());
    q.relations.erase(std::unique(q.relations.begin(), q.relations.end()), q.relations.end());
    q.joins = canonicalize_joins(schema, q.joins);
    std::sort(q.filters.begin(), q.filters.end(), [&](const FilterPredicate& a, const FilterPredicate& b) {
        return std::tuple(schema.attr_code(a.attr), static_cast<int>(a.op), a.constant) <
               std::tuple(schema.attr_code(b.attr), static_cast<int>(b.op), b.constant);
    });
    return q;
}

// --- filter intervals ---------------------------------------------------------

// One attribute's conjunction of filters collapsed to a half-open [lb, ub).
struct FilterInterval {
    double lb;
    double ub;
    bool empty() const { return lb >= ub; }
};

// Rewrites a single predicate to a half-open interval over the domain hull.
inline FilterInterval predicate_interval(const Schema& schema, const FilterPredicate& f) {
    const auto& att = schema.attribute(f.attr);
    const double l = att.hull_low(), u = att.hull_high(), eps = att.epsilon();
    switch (f.op) {
        case CmpOp::Ge: return {f.constant, u};
        case CmpOp::Gt: return {f.constant + eps, u};
        case CmpOp::Lt: return {l, f.constant};
        case CmpOp::Le: return {l, f.constant + eps};
        case CmpOp::Eq: return {f.constant, f.constant + eps};
    }
    return {l, u};
}

// Intersects all predicates of `q` touching `attr`; nullopt when unconstrained.
inline std::optional<FilterInterval> filter_interval(const Schema& schema, const SubQuery& q,
                                                     AttrRef attr) {
    std::optional<FilterInterval> acc;
    for (const auto& f : q.filters) {
        if (!(f.attr == attr)) continue;
        FilterInterval iv = predicate_interval(schema, f);
        if (!acc) {
            acc = iv;
        } else {
            acc->lb = std::max(acc->lb, iv.lb);
            acc->ub = std::min(acc->ub, iv.ub);
        }
    }
    return acc;
}

// --- SQL text ----------------------------------------------------------------

inline std::string to_sql(const Schema& schema, const SubQuery& q) {
    std::string sql = "SELECT COUNT(*) FROM ";
    for (std::size_t i = 0; i < q.relations.size(); ++i) {
        if (i) sql += ", ";
        sql += schema.relation(q.relations[i]).name;
    }
    std::vector<std::string> preds;
    for (const auto& j : q.joins)
        preds.push_back(schema.attr_name(j.lhs) + " = " + schema.attr_name(j.rhs));
    for (const auto& f : q.filters)
        preds.push_back(schema.attr_name(f.attr) + " " + to_string(f.op) + " " +
                        format_value(schema, f.attr, f.constant));
    if (!preds.empty()) {
        sql += " WHERE ";
        for (std::size_t i = 0; i < preds.size(); ++i) {
            if (i) sql += " AND ";
            sql += preds[i];
        }
    }
    return sql + ";";
}

namespace detail {

struct SqlLexer {
    std::string text;
    std::size_t pos = 0;

    void skip_ws() {
        while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    }

    bool eat(const std::string& tok) {
        skip_ws();
        if (text.compare(pos, tok.size(), tok) == 0) {
            pos += tok.size();
            return true;
        }
        return false;
    }

    void expect(const std::string& tok) {
        if (!eat(tok)) throw IoError("SQL parse error, expected '" + tok + "' in: " + text);
    }

    std::string ident() {
        skip_ws();
        std::size_t start = pos;
        while (pos < text.size() &&
               (std::isalnum(static_cast<unsigned char>(text[pos])) || text[pos] == '_'))
            ++pos;
        if (start == pos) throw IoError("SQL parse error, expected identifier in: " + text);
        return text.substr(start, pos - start);
    }

    double number() {
        skip_ws();
        std::size_t start = pos;
        while (pos < text.size() && (std::isdigit(static_cast<unsigned char>(text[pos])) ||
                                     text[pos] == '.' || text[pos] == '-' || text[pos] == '+' ||
                                     text[pos] == 'e' || text[pos] == 'E'))
            ++pos;
        double v = 0.0;
        auto res = std::from_chars(text.data() + start, text.data() + pos, v);
        if (res.ec != std::errc() || start == pos)
            throw IoError("SQL parse error, expected number in: " + text);
        return v;
    }

    bool done() {
        skip_ws();
        return pos >= text.size();
    }
};

}  // namespace detail

// Parses the restricted counting-query grammar produced by to_sql.
inline SubQuery parse_sql(const Schema& schema, const std::string& sql) {
    detail::SqlLexer lex{sql};
    lex.expect("SELECT");
    lex.expect("COUNT(*)");
    lex.expect("FROM");
    SubQuery q;
    q.relations.push_back(schema.require_relation(lex.ident()));
    while (lex.eat(",")) q.relations.push_back(schema.require_relation(lex.ident()));

    if (lex.eat("WHERE")) {
        do {
            std::string lrel = lex.ident();
            lex.expect(".");
            std::string lattr = lex.ident();
            AttrRef lhs = schema.resolve(lrel, lattr);
            CmpOp op;
            if (lex.eat("<="))
                op = CmpOp::Le;
            else if (lex.eat(">="))
                op = CmpOp::Ge;
            else if (lex.eat("<"))
                op = CmpOp::Lt;
            else if (lex.eat(">"))
                op = CmpOp::Gt;
            else if (lex.eat("="))
                op = CmpOp::Eq;
            else
                throw IoError("SQL parse error, expected comparison in: " + sql);

            lex.skip_ws();
            bool rhs_is_attr = false;
            if (op == CmpOp::Eq) {
                // lookahead: attribute reference or constant
                std::size_t save = lex.pos;
                if (std::isalpha(static_cast<unsigned char>(lex.text[lex.pos])) ||
                    lex.text[lex.pos] == '_') {
                    rhs_is_attr = true;
                } else {
                    lex.pos = save;
                }
            }
            if (rhs_is_attr) {
                std::string rrel = lex.ident();
                lex.expect(".");
                std::string rattr = lex.ident();
                q.joins.push_back(schema.normalized(lhs, schema.resolve(rrel, rattr)));
            } else {
                double c = lex.number();
                const auto& att = schema.attribute(lhs);
                if (c < att.hull_low() || c >= att.hull_high())
                    throw DomainViolationError("filter constant outside domain hull of " +
                                               schema.attr_name(lhs));
                q.filters.push_back({lhs, op, c});
            }
        } while (lex.eat("AND"));
    }
    lex.eat(";");
    if (!lex.done()) throw IoError("SQL parse error, trailing input in: " + sql);
    q = canonicalized(schema, q);
    validate(schema, q);
    return q;
}

}  // namespace cardlab
