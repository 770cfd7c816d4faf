#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "cardlab/errors.hpp"
#include "cardlab/schema.hpp"
#include "cardlab/text.hpp"

namespace cardlab {

using Tuple = std::vector<double>;

struct Row {
    std::uint64_t id = 0;
    Tuple values;
};

struct InsertStmt {
    std::uint32_t rel = 0;
    Tuple values;
};

struct DeleteStmt {
    std::uint32_t rel = 0;
    std::uint64_t row_id = 0;
};

struct UpdateStmt {
    std::uint32_t rel = 0;
    std::uint64_t row_id = 0;
    std::uint32_t attr = 0;
    double value = 0.0;
};

using DmlStatement = std::variant<InsertStmt, DeleteStmt, UpdateStmt>;

enum class DmlKind { Insert, Delete, Update };

inline DmlKind kind_of(const DmlStatement& s) {
    if (std::holds_alternative<InsertStmt>(s)) return DmlKind::Insert;
    if (std::holds_alternative<DeleteStmt>(s)) return DmlKind::Delete;
    return DmlKind::Update;
}

// Everything downstream consumers need to mirror one statement's effect.
struct StatementDelta {
    DmlKind kind = DmlKind::Insert;
    std::uint32_t rel = 0;
    std::uint64_t row_id = 0;
    Tuple old_values;  // delete/update
    Tuple new_values;  // insert/update (update: single changed value at index `attr`)
    std::uint32_t attr = 0;
};

class RelationStore {
public:
    const std::vector<Row>& rows() const { return rows_; }
    std::size_t size() const { return rows_.size(); }
    std::uint64_t next_row_id() const { return next_row_id_; }

    const Row* find(std::uint64_t id) const {
        auto it = index_.find(id);
        return it == index_.end() ? nullptr : &rows_[it->second];
    }

    std::uint64_t insert(Tuple values) {
        std::uint64_t id = next_row_id_++;
        index_[id] = rows_.size();
        rows_.push_back({id, std::move(values)});
        return id;
    }

    Tuple erase(std::uint64_t id) {
        auto it = index_.find(id);
        if (it == index_.end()) throw UnknownRowError("?", id);
        std::size_t pos = it->second;
        Tuple old = std::move(rows_[pos].values);
        index_.erase(it);
        if (pos + 1 != rows_.size()) {
            rows_[pos] = std::move(rows_.back());
            index_[rows_[pos].id] = pos;
        }
        rows_.pop_back();
        return old;
    }

    double update(std::uint64_t id, std::uint32_t attr, double value) {
        auto it = index_.find(id);
        if (it == index_.end()) throw UnknownRowError("?", id);
        double old = rows_[it->second].values.at(attr);
        rows_[it->second].values[attr] = value;
        return old;
    }

private:
    std::vector<Row> rows_;
    std::unordered_map<std::uint64_t, std::size_t> index_;
    std::uint64_t next_row_id_ = 1;
};

// Mutable in-memory database. Copies act as immutable snapshots.
class RowStore {
public:
    RowStore() = default;
    explicit RowStore(const Schema& schema) : relations_(schema.relation_count()) {}

    const RelationStore& relation(std::uint32_t r) const { return relations_.at(r); }
    RelationStore& relation(std::uint32_t r) { return relations_.at(r); }
    std::size_t relation_count() const { return relations_.size(); }

    std::size_t total_rows() const {
        std::size_t n = 0;
        for (const auto& r : relations_) n += r.size();
        return n;
    }

    friend bool operator==(const RowStore& a, const RowStore& b) {
        if (a.relations_.size() != b.relations_.size()) return false;
        for (std::size_t r = 0; r < a.relations_.size(); ++r) {
            const auto& x = a.relations_[r].rows();
            const auto& y = b.relations_[r].rows();
            if (x.size() != y.size()) return false;
            for (std::size_t i = 0; i < x.size(); ++i)
                if (x[i].id != y[i].id || x[i].values != y[i].values) return false;
        }
        return true;
    }

private:
    std::vector<RelationStore> relations_;
};

namespace detail {

inline void check_value(const Schema& schema, AttrRef ref, double v) {
    const auto& att = schema.attribute(ref);
    if (!att.contains(v))
        throw DomainViolationError("value " + std::to_string(v) + " outside domain of " +
                                   schema.attr_name(ref));
    if (is_discrete(att.kind) && v != std::floor(v))
        throw DomainViolationError("non-integral value for discrete attribute " +
                                   schema.attr_name(ref));
}

inline void check_tuple(const Schema& schema, std::uint32_t rel, const Tuple& t) {
    const auto& rd = schema.relation(rel);
    if (t.size() != rd.attributes.size())
        throw DomainViolationError("tuple arity mismatch for relation " + rd.name);
    for (std::uint32_t a = 0; a < t.size(); ++a) check_value(schema, {rel, a}, t[a]);
}

}  // namespace detail

// Applies one DML statement and reports the delta for histogram maintenance.
inline StatementDelta apply_statement(const Schema& schema, RowStore& store,
                                      const DmlStatement& stmt) {
    StatementDelta delta;
    if (const auto* ins = std::get_if<InsertStmt>(&stmt)) {
        if (ins->rel >= store.relation_count()) throw UnknownRelationError(std::to_string(ins->rel));
        detail::check_tuple(schema, ins->rel, ins->values);
        delta.kind = DmlKind::Insert;
        delta.rel = ins->rel;
        delta.new_values = ins->values;
        delta.row_id = store.relation(ins->rel).insert(ins->values);
    } else if (const auto* del = std::get_if<DeleteStmt>(&stmt)) {
        if (del->rel >= store.relation_count()) throw UnknownRelationError(std::to_string(del->rel));
        if (!store.relation(del->rel).find(del->row_id))
            throw UnknownRowError(schema.relation(del->rel).name, del->row_id);
        delta.kind = DmlKind::Delete;
        delta.rel = del->rel;
        delta.row_id = del->row_id;
        delta.old_values = store.relation(del->rel).erase(del->row_id);
    } else {
        const auto& upd = std::get<UpdateStmt>(stmt);
        if (upd.rel >= store.relation_count()) throw UnknownRelationError(std::to_string(upd.rel));
        if (!store.relation(upd.rel).find(upd.row_id))
            throw UnknownRowError(schema.relation(upd.rel).name, upd.row_id);
        detail::check_value(schema, {upd.rel, upd.attr}, upd.value);
        delta.kind = DmlKind::Update;
        delta.rel = upd.rel;
        delta.row_id = upd.row_id;
        delta.attr = upd.attr;
        double old = store.relation(upd.rel).update(upd.row_id, upd.attr, upd.value);
        delta.old_values = {old};
        delta.new_values = {upd.value};
    }
    return delta;
}

// Re-applies a recorded delta onto another store; inserts must replay in the
// original order so surrogate row ids line up.
inline void replay_delta(const Schema& schema, RowStore& store, const StatementDelta& delta) {
    switch (delta.kind) {
        case DmlKind::Insert:
            apply_statement(schema, store, InsertStmt{delta.rel, delta.new_values});
            break;
        case DmlKind::Delete:
            apply_statement(schema, store, DeleteStmt{delta.rel, delta.row_id});
            break;
        case DmlKind::Update:
            apply_statement(schema, store,
                            UpdateStmt{delta.rel, delta.row_id, delta.attr, delta.new_values[0]});
            break;
    }
}

// --- CSV bulk load / dump -------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_cell(const Schema& schema, AttrRef ref, const std::string& cell) {
    const auto& att = schema.attribute(ref);
    if (att.kind == AttrKind::Categorical && !att.labels.empty()) {
        for (std::size_t i = 0; i < att.labels.size(); ++i)
            if (att.labels[i] == cell) return static_cast<double>(i + 1);
    }
    try {
        return std::stod(cell);
    } catch (const std::exception&) {
        throw IoError("cannot parse value '" + cell + "' for " + schema.attr_name(ref));
    }
}

}  // namespace detail

// Loads one relation from CSV (header row of attribute names, any column order).
inline std::size_t load_relation_csv(const Schema& schema, RowStore& store, std::uint32_t rel,
                                     std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty CSV for relation " + schema.relation(rel).name);
    auto header = detail::split_csv_line(line);
    const auto& rd = schema.relation(rel);
    std::vector<int> col_to_attr(header.size(), -1);
    for (std::size_t c = 0; c < header.size(); ++c) {
        int a = rd.attribute_index(header[c]);
        if (a < 0) throw IoError("CSV column '" + header[c] + "' not in relation " + rd.name);
        col_to_attr[c] = a;
    }
    std::size_t n = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw IoError("CSV row arity mismatch in relation " + rd.name);
        Tuple t(rd.attributes.size(), 0.0);
        for (std::size_t c = 0; c < cells.size(); ++c) {
            std::uint32_t a = static_cast<std::uint32_t>(col_to_attr[c]);
            t[a] = detail::parse_cell(schema, {rel, a}, cells[c]);
        }
        apply_statement(schema, store, InsertStmt{rel, std::move(t)});
        ++n;
    }
    return n;
}

inline std::size_t load_relation_csv_file(const Schema& schema, RowStore& store, std::uint32_t rel,
                                          const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open CSV file: " + path);
    return load_relation_csv(schema, store, rel, in);
}

inline void dump_relation_csv(const Schema& schema, const RowStore& store, std::uint32_t rel,
                              std::ostream& out) {
    const auto& rd = schema.relation(rel);
    for (std::size_t a = 0; a < rd.attributes.size(); ++a)
        out << (a ? "," : "") << rd.attributes[a].name;
    out << "\n";
    for (const auto& row : store.relation(rel).rows()) {
        for (std::uint32_t a = 0; a < row.values.size(); ++a)
            out << (a ? "," : "") << format_value(schema, {rel, a}, row.values[a]);
        out << "\n";
    }
}

}  // namespace cardlab
