#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "cardlab/oracle.hpp"
#include "cardlab/rng.hpp"
#include "cardlab/states.hpp"
#include "cardlab/store.hpp"

namespace cardlab {

enum class WorkloadKind { InsertHeavy, UpdateHeavy, DistShift, Static };

inline const char* to_string(WorkloadKind k) {
    switch (k) {
        case WorkloadKind::InsertHeavy: return "insert-heavy";
        case WorkloadKind::UpdateHeavy: return "update-heavy";
        case WorkloadKind::DistShift: return "dist-shift";
        case WorkloadKind::Static: return "static";
    }
    return "?";
}

inline WorkloadKind workload_kind_from_string(const std::string& s) {
    if (s == "insert-heavy") return WorkloadKind::InsertHeavy;
    if (s == "update-heavy") return WorkloadKind::UpdateHeavy;
    if (s == "dist-shift") return WorkloadKind::DistShift;
    if (s == "static") return WorkloadKind::Static;
    throw Error("unknown workload kind: " + s);
}

// A query plus everything the optimizer would ask about it, shuffled as one
// atomic unit.
struct QueryPack {
    SubQuery query;
    std::vector<SubQuery> sub_queries;
    std::uint64_t ordinal = 0;  // appearance rank among all query records
};

using ScriptStatement = std::variant<DmlStatement, QueryPack>;

struct WorkloadScript {
    WorkloadKind kind = WorkloadKind::InsertHeavy;
    std::uint64_t seed = 0;
    std::size_t split_index = 0;  // first statement of the evaluation part
    double min_rho = 0.2;
    RowStore initial;
    std::vector<ScriptStatement> statements;

    std::size_t pack_count() const {
        std::size_t n = 0;
        for (const auto& s : statements) n += std::holds_alternative<QueryPack>(s) ? 1 : 0;
        return n;
    }
};

struct WorkloadConfig {
    WorkloadKind kind = WorkloadKind::InsertHeavy;
    std::size_t dml_count = 8000;
    std::size_t train_queries = 600;
    std::size_t eval_queries = 150;
    std::size_t train_copies = 3;
    double min_rho = 0.2;
    double initial_fraction = 2.0 / 3.0;
    double dist_shift_quantile = 0.3;  // inserted first-attribute values stay below this
};

// Fraction of the database changed since the training/evaluation boundary:
// (inserts + deletes + 2*updates) / |H|.
struct ChangeTracker {
    std::size_t boundary_rows = 0;
    std::uint64_t inserts = 0, deletes = 0, updates = 0;

    void record(DmlKind k) {
        switch (k) {
            case DmlKind::Insert: ++inserts; break;
            case DmlKind::Delete: ++deletes; break;
            case DmlKind::Update: ++updates; break;
        }
    }

    double rho() const {
        if (boundary_rows == 0) return 0.0;
        return static_cast<double>(inserts + deletes + 2 * updates) /
               static_cast<double>(boundary_rows);
    }
};

// --- query generation ---------------------------------------------------------

// Relations drawn by independent coin flips, joins drawn uniformly from the
// connecting subsets of the schema's join conditions, filters drawn by coin
// flips per attribute with constants sampled from the initial data.
inline SubQuery generate_query(const Schema& schema, const RowStore& initial, Rng& rng) {
    const std::size_t n_rel = schema.relation_count();
    for (int attempt = 0; attempt < 1000; ++attempt) {
        std::vector<std::uint32_t> rels;
        for (std::uint32_t r = 0; r < n_rel; ++r)
            if (rng.bernoulli(0.5)) rels.push_back(r);
        if (rels.empty()) continue;

        // declared join conditions applicable to the chosen relations
        std::vector<JoinPattern> applicable;
        for (const auto& p : schema.join_graph()) {
            bool l = std::find(rels.begin(), rels.end(), p.lhs.rel) != rels.end();
            bool r = std::find(rels.begin(), rels.end(), p.rhs.rel) != rels.end();
            if (l && r) applicable.push_back(p);
        }

        std::vector<std::vector<JoinPattern>> connecting;
        if (rels.size() == 1) {
            connecting.push_back({});
        } else {
            if (applicable.size() > 20) throw Error("too many join conditions to enumerate");
            for (std::uint64_t mask = 1; mask < (1ull << applicable.size()); ++mask) {
                SubQuery probe;
                probe.relations = rels;
                for (std::size_t i = 0; i < applicable.size(); ++i)
                    if (mask & (1ull << i)) probe.joins.push_back(applicable[i]);
                if (connected(probe)) connecting.push_back(probe.joins);
            }
            if (connecting.empty()) continue;  // this relation set cannot be joined
        }

        SubQuery q;
        q.relations = rels;
        q.joins = connecting[rng.below(connecting.size())];
        for (std::uint32_t r : rels) {
            const auto& rows = initial.relation(r).rows();
            if (rows.empty()) continue;
            const auto& rd = schema.relation(r);
            for (std::uint32_t a = 0; a < rd.attributes.size(); ++a) {
                if (!rng.bernoulli(0.5)) continue;
                static constexpr CmpOp kOps[] = {CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge,
                                                 CmpOp::Eq};
                CmpOp op = kOps[rng.below(5)];
                double constant = rows[rng.below(rows.size())].values[a];
                q.filters.push_back({{r, a}, op, constant});
            }
        }
        return canonicalized(schema, q);
    }
    throw GenerationExhaustedError("could not draw a connectable relation set in 1000 tries");
}

// --- workload generation --------------------------------------------------------

namespace detail {

struct DmlCounts {
    std::size_t inserts = 0, deletes = 0, updates = 0;
};

inline DmlCounts ratio_counts(WorkloadKind kind, std::size_t n) {
    DmlCounts c;
    const auto quarter = static_cast<std::size_t>(std::llround(static_cast<double>(n) / 4.0));
    switch (kind) {
        case WorkloadKind::InsertHeavy:
        case WorkloadKind::DistShift:
            c.deletes = quarter;
            c.updates = quarter;
            c.inserts = n - c.deletes - c.updates;
            break;
        case WorkloadKind::UpdateHeavy:
            c.inserts = quarter;
            c.deletes = quarter;
            c.updates = n - c.inserts - c.deletes;
            break;
        case WorkloadKind::Static:
            break;
    }
    return c;
}

// uniform row over all live rows; relation weight follows its size
inline std::pair<std::uint32_t, std::uint64_t> pick_live_row(const RowStore& store, Rng& rng) {
    std::size_t total = store.total_rows();
    if (total == 0) throw InsufficientDataError("no rows left to target");
    std::size_t k = rng.below(total);
    for (std::uint32_t r = 0; r < store.relation_count(); ++r) {
        const auto& rel = store.relation(r);
        if (k < rel.size()) return {r, rel.rows()[k].id};
        k -= rel.size();
    }
    throw Error("unreachable");
}

}  // namespace detail

inline WorkloadScript generate_workload(const Schema& schema, const RowStore& full,
                                        const WorkloadConfig& cfg, Rng& rng) {
    WorkloadScript script;
    script.kind = cfg.kind;
    script.seed = rng.seed();
    script.min_rho = cfg.min_rho;
    script.initial = RowStore(schema);

    for (std::uint32_t r = 0; r < schema.relation_count(); ++r)
        if (full.relation(r).size() == 0)
            throw InsufficientDataError("relation " + schema.relation(r).name + " is empty");

    const std::size_t n_dml = cfg.kind == WorkloadKind::Static ? 0 : cfg.dml_count;
    const auto counts = detail::ratio_counts(cfg.kind, n_dml);

    // split full data into the initial load and the leftover pool
    struct PoolRow {
        std::uint32_t rel;
        Tuple values;
        bool insertable;  // Dist-shift restricts inserts to low first-attribute rows
    };
    std::vector<PoolRow> pool;
    std::size_t insertable_total = 0;
    for (std::uint32_t r = 0; r < schema.relation_count(); ++r) {
        const auto& rows = full.relation(r).rows();
        std::vector<std::size_t> idx(rows.size());
        std::iota(idx.begin(), idx.end(), 0);
        const std::size_t n_init = static_cast<std::size_t>(
            std::ceil(cfg.initial_fraction * static_cast<double>(rows.size())));
        double threshold = 0.0;
        if (cfg.kind == WorkloadKind::DistShift) {
            std::vector<double> firsts;
            firsts.reserve(rows.size());
            for (const auto& row : rows) firsts.push_back(row.values[0]);
            std::sort(firsts.begin(), firsts.end());
            const std::size_t rank = static_cast<std::size_t>(
                cfg.dist_shift_quantile * static_cast<double>(firsts.size()));
            threshold = firsts[std::min(rank, firsts.size() - 1)];
            // keep low-first-attribute rows out of the initial load first
            std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
                return (rows[a].values[0] <= threshold) < (rows[b].values[0] <= threshold);
            });
            std::size_t boundary = 0;
            while (boundary < idx.size() && rows[idx[boundary]].values[0] > threshold) ++boundary;
            Rng sub = rng.fork(9000 + r);
            std::vector<std::size_t> high(idx.begin(), idx.begin() + boundary);
            std::vector<std::size_t> low(idx.begin() + boundary, idx.end());
            sub.shuffle(high);
            sub.shuffle(low);
            // initial load prefers high rows so that the pool keeps the low ones
            idx.clear();
            idx.insert(idx.end(), high.begin(), high.end());
            idx.insert(idx.end(), low.begin(), low.end());
        } else {
            rng.shuffle(idx);
        }
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const Row& row = rows[idx[i]];
            if (i < n_init) {
                apply_statement(schema, script.initial, InsertStmt{r, row.values});
            } else {
                bool ok = cfg.kind != WorkloadKind::DistShift || row.values[0] <= threshold;
                pool.push_back({r, row.values, ok});
                insertable_total += ok ? 1 : 0;
            }
        }
    }
    if (counts.inserts > insertable_total)
        throw InsufficientDataError("insert budget " + std::to_string(counts.inserts) +
                                    " exceeds the " + std::to_string(insertable_total) +
                                    " pool rows eligible for insertion");

    // generate the DML sequence against a scratch copy so every target exists
    RowStore scratch = script.initial;
    std::vector<DmlKind> kinds;
    kinds.insert(kinds.end(), counts.inserts, DmlKind::Insert);
    kinds.insert(kinds.end(), counts.deletes, DmlKind::Delete);
    kinds.insert(kinds.end(), counts.updates, DmlKind::Update);
    rng.shuffle(kinds);

    std::vector<std::size_t> insertable_pool;
    for (std::size_t i = 0; i < pool.size(); ++i)
        if (pool[i].insertable) insertable_pool.push_back(i);

    std::vector<DmlStatement> dml;
    dml.reserve(kinds.size());
    std::size_t boundary_rows = 0;
    const std::size_t train_dml = kinds.size() / 2;
    std::vector<int> eval_churn;  // per-eval-statement symmetric-difference weight
    for (std::size_t i = 0; i < kinds.size(); ++i) {
        DmlStatement stmt;
        switch (kinds[i]) {
            case DmlKind::Insert: {
                std::size_t slot = rng.below(insertable_pool.size());
                std::size_t pi = insertable_pool[slot];
                insertable_pool[slot] = insertable_pool.back();
                insertable_pool.pop_back();
                stmt = InsertStmt{pool[pi].rel, pool[pi].values};
                break;
            }
            case DmlKind::Delete: {
                auto [rel, row] = detail::pick_live_row(scratch, rng);
                stmt = DeleteStmt{rel, row};
                break;
            }
            case DmlKind::Update: {
                auto [rel, row] = detail::pick_live_row(scratch, rng);
                const auto& rd = schema.relation(rel);
                std::uint32_t attr = static_cast<std::uint32_t>(rng.below(rd.attributes.size()));
                // new value from the leftover pool, domain draw as fallback
                double value;
                std::vector<std::size_t> same_rel;
                for (std::size_t pi = 0; pi < pool.size(); ++pi)
                    if (pool[pi].rel == rel) same_rel.push_back(pi);
                if (!same_rel.empty()) {
                    value = pool[same_rel[rng.below(same_rel.size())]].values[attr];
                } else {
                    const auto& att = rd.attributes[attr];
                    value = is_discrete(att.kind)
                                ? static_cast<double>(rng.uniform_int(
                                      static_cast<std::int64_t>(att.low),
                                      static_cast<std::int64_t>(att.high)))
                                : rng.uniform(att.low, att.high);
                }
                stmt = UpdateStmt{rel, row, attr, value};
                break;
            }
        }
        apply_statement(schema, scratch, stmt);
        dml.push_back(std::move(stmt));
        if (i + 1 == train_dml) boundary_rows = scratch.total_rows();
        if (i >= train_dml) eval_churn.push_back(kinds[i] == DmlKind::Update ? 2 : 1);
    }
    if (cfg.kind == WorkloadKind::Static) boundary_rows = scratch.total_rows();

    // queries come with their sub-query packs
    auto make_pack = [&](Rng& qrng) {
        QueryPack pack;
        pack.query = generate_query(schema, script.initial, qrng);
        pack.sub_queries = enumerate_sub_queries(schema, pack.query);
        return pack;
    };
    Rng train_qrng = rng.fork(101);
    Rng eval_qrng = rng.fork(202);
    std::vector<QueryPack> train_packs;
    for (std::size_t i = 0; i < cfg.train_queries; ++i) {
        QueryPack p = make_pack(train_qrng);
        for (std::size_t c = 0; c < cfg.train_copies; ++c) train_packs.push_back(p);
    }
    std::vector<QueryPack> eval_packs;
    for (std::size_t i = 0; i < cfg.eval_queries; ++i) eval_packs.push_back(make_pack(eval_qrng));
    rng.shuffle(train_packs);
    rng.shuffle(eval_packs);

    // evaluation packs may only appear once the changing rate clears min_rho
    std::size_t eval_prefix = 0;
    if (cfg.kind != WorkloadKind::Static && !eval_packs.empty()) {
        const double need = cfg.min_rho * static_cast<double>(boundary_rows);
        double churn = 0.0;
        eval_prefix = eval_churn.size() + 1;
        for (std::size_t k = 0; k < eval_churn.size(); ++k) {
            churn += eval_churn[k];
            if (churn >= need) {
                eval_prefix = k + 1;
                break;
            }
        }
        if (eval_prefix > eval_churn.size())
            throw InsufficientDataError(
                "evaluation DML cannot reach the required changing rate; grow dml_count");
    }

    // weave packs into the DML streams (relative DML order is fixed)
    auto weave = [&](std::vector<DmlStatement>::iterator dml_begin, std::size_t dml_n,
                     std::vector<QueryPack>& packs, std::size_t frozen_prefix) {
        std::vector<char> is_pack(dml_n - frozen_prefix + packs.size(), 0);
        std::fill(is_pack.begin(), is_pack.begin() + static_cast<long>(packs.size()), 1);
        rng.shuffle(is_pack);
        std::vector<ScriptStatement> out;
        out.reserve(dml_n + packs.size());
        for (std::size_t i = 0; i < frozen_prefix; ++i) out.push_back(*(dml_begin + i));
        std::size_t di = frozen_prefix, pi = 0;
        for (char flag : is_pack) {
            if (flag)
                out.push_back(packs[pi++]);
            else
                out.push_back(*(dml_begin + di++));
        }
        return out;
    };

    auto train_part = weave(dml.begin(), train_dml, train_packs, 0);
    auto eval_part = weave(dml.begin() + train_dml, dml.size() - train_dml, eval_packs,
                           eval_prefix);
    script.statements = std::move(train_part);
    script.split_index = script.statements.size();
    script.statements.insert(script.statements.end(), eval_part.begin(), eval_part.end());

    std::uint64_t ordinal = 0;
    for (auto& s : script.statements)
        if (auto* p = std::get_if<QueryPack>(&s)) p->ordinal = ordinal++;
    return script;
}

// --- serialization ---------------------------------------------------------------

inline void save_workload(const Schema& schema, const WorkloadScript& script,
                          const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    for (std::uint32_t r = 0; r < schema.relation_count(); ++r) {
        std::ofstream out(fs::path(dir) / ("init_" + schema.relation(r).name + ".csv"));
        if (!out) throw IoError("cannot write initial data CSV in " + dir);
        dump_relation_csv(schema, script.initial, r, out);
    }
    std::ofstream out(fs::path(dir) / "script.jsonl");
    if (!out) throw IoError("cannot write workload script in " + dir);
    nlohmann::json header = {{"type", "header"},
                             {"kind", to_string(script.kind)},
                             {"seed", script.seed},
                             {"split_index", script.split_index},
                             {"min_rho", script.min_rho},
                             {"statements", script.statements.size()}};
    out << header.dump() << "\n";
    for (const auto& s : script.statements) {
        nlohmann::json j;
        if (const auto* pack = std::get_if<QueryPack>(&s)) {
            j = {{"op", "query"}, {"ordinal", pack->ordinal}, {"sql", to_sql(schema, pack->query)}};
        } else {
            const auto& stmt = std::get<DmlStatement>(s);
            if (const auto* ins = std::get_if<InsertStmt>(&stmt)) {
                j = {{"op", "insert"}, {"rel", schema.relation(ins->rel).name},
                     {"values", ins->values}};
            } else if (const auto* del = std::get_if<DeleteStmt>(&stmt)) {
                j = {{"op", "delete"}, {"rel", schema.relation(del->rel).name},
                     {"row", del->row_id}};
            } else {
                const auto& upd = std::get<UpdateStmt>(stmt);
                j = {{"op", "update"},
                     {"rel", schema.relation(upd.rel).name},
                     {"row", upd.row_id},
                     {"attr", schema.relation(upd.rel).attributes[upd.attr].name},
                     {"value", upd.value}};
            }
        }
        out << j.dump() << "\n";
    }
}

inline WorkloadScript load_workload(const Schema& schema, const std::string& dir) {
    namespace fs = std::filesystem;
    WorkloadScript script;
    script.initial = RowStore(schema);
    for (std::uint32_t r = 0; r < schema.relation_count(); ++r) {
        const fs::path p = fs::path(dir) / ("init_" + schema.relation(r).name + ".csv");
        load_relation_csv_file(schema, script.initial, r, p.string());
    }
    std::ifstream in(fs::path(dir) / "script.jsonl");
    if (!in) throw IoError("cannot open workload script in " + dir);
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty workload script");
    nlohmann::json header = nlohmann::json::parse(line);
    if (header.value("type", "") != "header") throw IoError("workload script missing header");
    script.kind = workload_kind_from_string(header.at("kind").get<std::string>());
    script.seed = header.at("seed").get<std::uint64_t>();
    script.split_index = header.at("split_index").get<std::size_t>();
    script.min_rho = header.value("min_rho", 0.2);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        const std::string op = j.at("op").get<std::string>();
        if (op == "query") {
            QueryPack pack;
            pack.ordinal = j.at("ordinal").get<std::uint64_t>();
            pack.query = parse_sql(schema, j.at("sql").get<std::string>());
            pack.sub_queries = enumerate_sub_queries(schema, pack.query);
            script.statements.emplace_back(std::move(pack));
        } else if (op == "insert") {
            std::uint32_t rel = schema.require_relation(j.at("rel").get<std::string>());
            script.statements.emplace_back(
                DmlStatement(InsertStmt{rel, j.at("values").get<Tuple>()}));
        } else if (op == "delete") {
            std::uint32_t rel = schema.require_relation(j.at("rel").get<std::string>());
            script.statements.emplace_back(
                DmlStatement(DeleteStmt{rel, j.at("row").get<std::uint64_t>()}));
        } else if (op == "update") {
            std::uint32_t rel = schema.require_relation(j.at("rel").get<std::string>());
            int attr = schema.relation(rel).attribute_index(j.at("attr").get<std::string>());
            if (attr < 0) throw IoError("update references unknown attribute");
            script.statements.emplace_back(
                DmlStatement(UpdateStmt{rel, j.at("row").get<std::uint64_t>(),
                                        static_cast<std::uint32_t>(attr),
                                        j.at("value").get<double>()}));
        } else {
            throw IoError("unknown workload op: " + op);
        }
    }
    return script;
}

// --- replay ----------------------------------------------------------------------

struct PackEvent {
    const QueryPack* pack = nullptr;
    bool evaluation = false;
    std::uint32_t snapshot_id = 0;  // running pack index over the whole script
    double rho = 0.0;
    std::vector<std::uint64_t> true_cards;  // aligned with pack->sub_queries
};

struct ReplaySinks {
    // live store/states at the training/evaluation boundary
    std::function<void(const RowStore&, const DbStates&)> on_boundary;
    // per pack, with the live DB states snapshot
    std::function<void(const PackEvent&, const DbStates&)> on_pack;
    bool want_true_cards = true;
};

// Sequentially executes the script on a fresh store, maintaining DB states
// incrementally, and streams a snapshot + oracle labels at every query pack.
inline void replay(const Schema& schema, const WorkloadScript& script, std::size_t d_x,
                   BinMode bin_mode, const ReplaySinks& sinks) {
    RowStore store = script.initial;
    DbStates states = DbStates::build(schema, store, d_x, bin_mode);
    ChangeTracker tracker;
    std::uint32_t snapshot_id = 0;
    for (std::size_t i = 0; i < script.statements.size(); ++i) {
        if (i == script.split_index) {
            tracker.boundary_rows = store.total_rows();
            if (sinks.on_boundary) sinks.on_boundary(store, states);
        }
        const bool evaluation = i >= script.split_index;
        if (const auto* stmt = std::get_if<DmlStatement>(&script.statements[i])) {
            const StatementDelta delta = apply_statement(schema, store, *stmt);
            states.update(schema, delta);
            if (evaluation) tracker.record(delta.kind);
        } else {
            const auto& pack = std::get<QueryPack>(script.statements[i]);
            PackEvent ev;
            ev.pack = &pack;
            ev.evaluation = evaluation;
            ev.snapshot_id = snapshot_id++;
            ev.rho = evaluation ? tracker.rho() : 0.0;
            if (sinks.want_true_cards) {
                ev.true_cards.reserve(pack.sub_queries.size());
                for (const auto& sq : pack.sub_queries)
                    ev.true_cards.push_back(hash_join_count(schema, store, sq));
            }
            if (sinks.on_pack) sinks.on_pack(ev, states);
        }
    }
    if (script.split_index == script.statements.size()) {
        tracker.boundary_rows = store.total_rows();
        if (sinks.on_boundary) sinks.on_boundary(store, states);
    }
}

}  // namespace cardlab
