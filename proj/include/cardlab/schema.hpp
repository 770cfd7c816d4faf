#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cardlab/errors.hpp"

namespace cardlab {

enum class AttrKind { Categorical, Integer, Real };

inline bool is_discrete(AttrKind k) { return k != AttrKind::Real; }

struct AttributeDef {
    std::string name;
    AttrKind kind = AttrKind::Real;
    double low = 0.0;   // inclusive lower bound
    double high = 1.0;  // inclusive upper bound (categorical: number of labels)
    std::vector<std::string> labels;  // optional 1-based mapping for categorical values

    // Half-open hull [l, u) that contains every legal value, including the sup.
    double hull_low() const { return low; }
    double hull_high() const {
        if (is_discrete(kind)) return high + 1.0;
        return high + std::max(std::abs(high) * 0x1.0p-32, (high - low) * 1e-12) + 1e-12;
    }
    double hull_width() const { return hull_high() - hull_low(); }

    // Smallest meaningful domain step, used to rewrite strict/equality predicates.
    double epsilon() const {
        return is_discrete(kind) ? 1.0 : 1e-9 * (hull_high() - hull_low());
    }

    bool contains(double v) const { return std::isfinite(v) && v >= low && v <= high; }
};

struct RelationDef {
    std::string name;
    std::vector<AttributeDef> attributes;

    int attribute_index(const std::string& attr) const {
        for (std::size_t i = 0; i < attributes.size(); ++i)
            if (attributes[i].name == attr) return static_cast<int>(i);
        return -1;
    }
};

// (relation, attribute) position within a schema.
struct AttrRef {
    std::uint32_t rel = 0;
    std::uint32_t attr = 0;

    friend bool operator==(const AttrRef&, const AttrRef&) = default;
    friend auto operator<=>(const AttrRef&, const AttrRef&) = default;
};

// A joinable attribute pair, kept sorted by attribute code.
struct JoinPattern {
    AttrRef lhs;
    AttrRef rhs;

    friend bool operator==(const JoinPattern&, const JoinPattern&) = default;
    friend auto operator<=>(const JoinPattern&, const JoinPattern&) = default;
};

class Schema {
public:
    Schema() = default;
    Schema(std::vector<RelationDef> relations, std::vector<JoinPattern> joins)
        : relations_(std::move(relations)) {
        validate_relations();
        for (auto& j : joins) add_join(j.lhs, j.rhs);
    }

    const std::vector<RelationDef>& relations() const { return relations_; }
    const RelationDef& relation(std::uint32_t i) const { return relations_.at(i); }
    const AttributeDef& attribute(AttrRef ref) const {
        return relations_.at(ref.rel).attributes.at(ref.attr);
    }
    const std::vector<JoinPattern>& join_graph() const { return joins_; }

    std::size_t relation_count() const { return relations_.size(); }

    std::size_t total_attributes() const {
        std::size_t t = 0;
        for (const auto& r : relations_) t += r.attributes.size();
        return t;
    }

    std::size_t max_attributes_per_relation() const {
        std::size_t m = 0;
        for (const auto& r : relations_) m = std::max(m, r.attributes.size());
        return m;
    }

    // Bit widths of the relation/attribute id encoding.
    std::uint32_t rel_bits() const { return ceil_log2(relation_count() + 1); }
    std::uint32_t attr_bits() const { return ceil_log2(max_attributes_per_relation() + 1); }
    std::uint32_t code_bits() const { return rel_bits() + attr_bits(); }

    // Integer id of an attribute; ids are 1-based so code 0 never occurs.
    // Sorting by code equals schema declaration order.
    std::uint32_t attr_code(AttrRef ref) const {
        return ((ref.rel + 1) << attr_bits()) | (ref.attr + 1);
    }

    // Flat index of an attribute in the global (code-sorted) attribute order.
    std::size_t global_index(AttrRef ref) const {
        std::size_t idx = 0;
        for (std::uint32_t r = 0; r < ref.rel; ++r) idx += relations_[r].attributes.size();
        return idx + ref.attr;
    }

    std::vector<AttrRef> global_order() const {
        std::vector<AttrRef> out;
        for (std::uint32_t r = 0; r < relations_.size(); ++r)
            for (std::uint32_t a = 0; a < relations_[r].attributes.size(); ++a)
                out.push_back({r, a});
        return out;
    }

    int relation_index(const std::string& name) const {
        for (std::size_t i = 0; i < relations_.size(); ++i)
            if (relations_[i].name == name) return static_cast<int>(i);
        return -1;
    }

    std::uint32_t require_relation(const std::string& name) const {
        int idx = relation_index(name);
        if (idx < 0) throw UnknownRelationError(name);
        return static_cast<std::uint32_t>(idx);
    }

    AttrRef resolve(const std::string& rel, const std::string& attr) const {
        std::uint32_t r = require_relation(rel);
        int a = relations_[r].attribute_index(attr);
        if (a < 0) throw Error("relation " + rel + " has no attribute " + attr);
        return {r, static_cast<std::uint32_t>(a)};
    }

    std::string attr_name(AttrRef ref) const {
        return relations_.at(ref.rel).name + "." + attribute(ref).name;
    }

    JoinPattern normalized(AttrRef a, AttrRef b) const {
        if (attr_code(a) > attr_code(b)) std::swap(a, b);
        return {a, b};
    }

    static Schema from_json(const nlohmann::json& j);
    static Schema load(const std::string& path);
    nlohmann::json to_json() const;

private:
    void validate_relations() const {
        if (relations_.empty()) throw Error("schema needs at least one relation");
        for (std::size_t i = 0; i < relations_.size(); ++i) {
            const auto& r = relations_[i];
            if (r.attributes.empty()) throw Error("relation " + r.name + " has no attributes");
            for (std::size_t k = i + 1; k < relations_.size(); ++k)
                if (relations_[k].name == r.name) throw Error("duplicate relation name: " + r.name);
            for (std::size_t a = 0; a < r.attributes.size(); ++a) {
                const auto& att = r.attributes[a];
                if (!(att.low < att.high) && !(is_discrete(att.kind) && att.low == att.high))
                    throw EmptyDomainError("degenerate domain for " + r.name + "." + att.name);
                for (std::size_t b = a + 1; b < r.attributes.size(); ++b)
                    if (r.attributes[b].name == att.name)
                        throw Error("duplicate attribute " + att.name + " in " + r.name);
            }
        }
    }

    void add_join(AttrRef a, AttrRef b) {
        if (a.rel >= relations_.size() || b.rel >= relations_.size() ||
            a.attr >= relations_[a.rel].attributes.size() ||
            b.attr >= relations_[b.rel].attributes.size())
            throw Error("join pattern references unknown attribute");
        if (a.rel == b.rel) throw Error("join pattern must span two relations");
        if (is_discrete(attribute(a).kind) != is_discrete(attribute(b).kind))
            throw Error("join pattern over incompatible attribute kinds");
        JoinPattern p = normalized(a, b);
        if (std::find(joins_.begin(), joins_.end(), p) == joins_.end()) joins_.push_back(p);
        std::sort(joins_.begin(), joins_.end(), [this](const JoinPattern& x, const JoinPattern& y) {
            return std::pair(attr_code(x.lhs), attr_code(x.rhs)) <
                   std::pair(attr_code(y.lhs), attr_code(y.rhs));
        });
    }

    static std::uint32_t ceil_log2(std::size_t n) {
        std::uint32_t bits = 0;
        std::size_t v = 1;
        while (v < n) {
            v <<= 1;
            ++bits;
        }
        return bits == 0 ? 1 : bits;
    }

    std::vector<RelationDef> relations_;
    std::vector<JoinPattern> joins_;
};

inline AttrKind attr_kind_from_string(const std::string& s) {
    if (s == "categorical") return AttrKind::Categorical;
    if (s == "integer") return AttrKind::Integer;
    if (s == "real") return AttrKind::Real;
    throw Error("unknown attribute kind: " + s);
}

inline std::string to_string(AttrKind k) {
    switch (k) {
        case AttrKind::Categorical: return "categorical";
        case AttrKind::Integer: return "integer";
        case AttrKind::Real: return "real";
    }
    return "?";
}

inline Schema Schema::from_json(const nlohmann::json& j) {
    std::vector<RelationDef> rels;
    for (const auto& jr : j.at("relations")) {
        RelationDef rd;
        rd.name = jr.at("name").get<std::string>();
        for (const auto& ja : jr.at("attributes")) {
            AttributeDef ad;
            ad.name = ja.at("name").get<std::string>();
            ad.kind = attr_kind_from_string(ja.at("kind").get<std::string>());
            if (ad.kind == AttrKind::Categorical) {
                if (ja.contains("labels")) {
                    ad.labels = ja.at("labels").get<std::vector<std::string>>();
                    ad.high = static_cast<double>(ad.labels.size());
                } else {
                    ad.high = ja.at("size").get<double>();
                }
                ad.low = 1.0;
            } else {
                ad.low = ja.at("low").get<double>();
                ad.high = ja.at("high").get<double>();
            }
            rd.attributes.push_back(std::move(ad));
        }
        rels.push_back(std::move(rd));
    }

    Schema schema(std::move(rels), {});
    if (j.contains("joins")) {
        for (const auto& jj : j.at("joins")) {
            auto split = [](const std::string& s) {
                auto dot = s.find('.');
                if (dot == std::string::npos) throw Error("join endpoint must be rel.attr: " + s);
                return std::pair(s.substr(0, dot), s.substr(dot + 1));
            };
            auto [lr, la] = split(jj.at(0).get<std::string>());
            auto [rr, ra] = split(jj.at(1).get<std::string>());
            schema.add_join(schema.resolve(lr, la), schema.resolve(rr, ra));
        }
    }
    return schema;
}

inline Schema Schema::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open schema file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw IoError("malformed schema file " + path + ": " + e.what());
    }
    return from_json(j);
}

inline nlohmann::json Schema::to_json() const {
    nlohmann::json j;
    j["relations"] = nlohmann::json::array();
    for (const auto& r : relations_) {
        nlohmann::json jr;
        jr["name"] = r.name;
        jr["attributes"] = nlohmann::json::array();
        for (const auto& a : r.attributes) {
            nlohmann::json ja;
            ja["name"] = a.name;
            ja["kind"] = to_string(a.kind);
            if (a.kind == AttrKind::Categorical) {
                if (!a.labels.empty())
                    ja["labels"] = a.labels;
                else
                    ja["size"] = a.high;
            } else {
                ja["low"] = a.low;
                ja["high"] = a.high;
            }
            jr["attributes"].push_back(std::move(ja));
        }
        j["relations"].push_back(std::move(jr));
    }
    j["joins"] = nlohmann::json::array();
    for (const auto& p : joins_)
        j["joins"].push_back({attr_name(p.lhs), attr_name(p.rhs)});
    return j;
}

}  // namespace cardlab
