#pragma once

#include <cmath>
#include <vector>

#include "cardlab/cardlab.hpp"

namespace cardlab::test {

// Three relations joined in a chain: r1.a = r2.a, r2.d = r3.d.
inline Schema chain_schema() {
    return Schema(
        {
            {"r1",
             {{"a", AttrKind::Categorical, 1, 8, {}},
              {"b", AttrKind::Integer, 0, 49, {}},
              {"c", AttrKind::Real, 0, 10, {}}}},
            {"r2",
             {{"a", AttrKind::Categorical, 1, 8, {}},
              {"d", AttrKind::Categorical, 1, 5, {}},
              {"e", AttrKind::Real, 0, 100, {}}}},
            {"r3", {{"d", AttrKind::Categorical, 1, 5, {}}, {"f", AttrKind::Integer, 0, 19, {}}}},
        },
        {
            {{0, 0}, {1, 0}},
            {{1, 1}, {2, 0}},
        });
}

// Every pair of relations joinable, each pair on its own attribute pair, so
// the triangle survives equivalence-class rewriting.
inline Schema triangle_schema() {
    return Schema(
        {
            {"t1", {{"x", AttrKind::Categorical, 1, 6, {}}, {"z", AttrKind::Categorical, 1, 6, {}}}},
            {"t2", {{"x", AttrKind::Categorical, 1, 6, {}}, {"y", AttrKind::Categorical, 1, 6, {}}}},
            {"t3", {{"y", AttrKind::Categorical, 1, 6, {}}, {"z", AttrKind::Categorical, 1, 6, {}}}},
        },
        {
            {{0, 0}, {1, 0}},  // t1.x = t2.x
            {{1, 1}, {2, 0}},  // t2.y = t3.y
            {{0, 1}, {2, 1}},  // t1.z = t3.z
        });
}

// Relation/attribute layout of the featurization worked example: three
// relations with 1, 2 and 3 attributes, so both id fields need two bits.
inline Schema worked_example_schema() {
    return Schema(
        {
            {"r1", {{"a1", AttrKind::Real, 0, 1, {}}}},
            {"r2", {{"a1", AttrKind::Real, 0, 1, {}}, {"a2", AttrKind::Real, 0, 1, {}}}},
            {"r3",
             {{"a1", AttrKind::Real, 0, 1, {}},
              {"a2", AttrKind::Real, 0, 1, {}},
              {"a3", AttrKind::Real, 0, 1, {}}}},
        },
        {
            {{0, 0}, {1, 0}},
            {{1, 1}, {2, 2}},
        });
}

inline double random_value(const AttributeDef& att, Rng& rng) {
    if (is_discrete(att.kind))
        return static_cast<double>(rng.uniform_int(static_cast<std::int64_t>(att.low),
                                                   static_cast<std::int64_t>(att.high)));
    return rng.uniform(att.low, att.high);
}

inline Tuple random_tuple(const Schema& schema, std::uint32_t rel, Rng& rng) {
    const auto& rd = schema.relation(rel);
    Tuple t;
    t.reserve(rd.attributes.size());
    for (const auto& att : rd.attributes) t.push_back(random_value(att, rng));
    return t;
}

inline RowStore random_instance(const Schema& schema, Rng& rng, std::size_t total_rows) {
    RowStore store(schema);
    for (std::size_t i = 0; i < total_rows; ++i) {
        std::uint32_t rel = static_cast<std::uint32_t>(rng.below(schema.relation_count()));
        apply_statement(schema, store, InsertStmt{rel, random_tuple(schema, rel, rng)});
    }
    return store;
}

inline DmlStatement random_statement(const Schema& schema, const RowStore& store, Rng& rng) {
    for (;;) {
        switch (rng.below(3)) {
            case 0: {
                std::uint32_t rel = static_cast<std::uint32_t>(rng.below(schema.relation_count()));
                return InsertStmt{rel, random_tuple(schema, rel, rng)};
            }
            case 1: {
                if (store.total_rows() == 0) break;
                std::size_t k = rng.below(store.total_rows());
                for (std::uint32_t r = 0; r < store.relation_count(); ++r) {
                    if (k < store.relation(r).size())
                        return DeleteStmt{r, store.relation(r).rows()[k].id};
                    k -= store.relation(r).size();
                }
                break;
            }
            default: {
                if (store.total_rows() == 0) break;
                std::size_t k = rng.below(store.total_rows());
                for (std::uint32_t r = 0; r < store.relation_count(); ++r) {
                    if (k < store.relation(r).size()) {
                        const auto& rd = schema.relation(r);
                        std::uint32_t attr =
                            static_cast<std::uint32_t>(rng.below(rd.attributes.size()));
                        return UpdateStmt{r, store.relation(r).rows()[k].id, attr,
                                          random_value(rd.attributes[attr], rng)};
                    }
                    k -= store.relation(r).size();
                }
                break;
            }
        }
    }
}

// Synthetic database with strong intra-relation correlations and skewed join
// keys; independence-based estimators go visibly wrong here. All attributes
// are discrete so equality filters keep sane selectivities.
struct CorrelatedDataset {
    Schema schema;
    RowStore full;
};

inline CorrelatedDataset correlated_dataset(Rng& rng, std::size_t n_cust = 7000,
                                            std::size_t n_orders = 8000,
                                            std::size_t n_stock = 5000) {
    Schema schema(
        {
            {"cust",
             {{"region", AttrKind::Categorical, 1, 50, {}},
              {"segment", AttrKind::Categorical, 1, 8, {}},
              {"age", AttrKind::Integer, 18, 80, {}},
              {"income", AttrKind::Integer, 0, 199, {}},
              {"visits", AttrKind::Integer, 0, 127, {}}}},
            {"orders",
             {{"region", AttrKind::Categorical, 1, 50, {}},
              {"item", AttrKind::Categorical, 1, 12, {}},
              {"month", AttrKind::Categorical, 1, 12, {}},
              {"qty", AttrKind::Integer, 1, 40, {}},
              {"price", AttrKind::Integer, 0, 149, {}}}},
            {"stock",
             {{"item", AttrKind::Categorical, 1, 12, {}},
              {"month", AttrKind::Categorical, 1, 12, {}},
              {"level", AttrKind::Integer, 0, 199, {}}}},
        },
        {
            {{0, 0}, {1, 0}},  // cust.region = orders.region
            {{1, 1}, {2, 0}},  // orders.item = stock.item
            {{1, 2}, {2, 1}},  // orders.month = stock.month
        });

    auto skewed = [&](double n) { return 1.0 + std::floor((n - 0.001) * rng.uniform() * rng.uniform()); };
    CorrelatedDataset ds{schema, RowStore(schema)};
    for (std::size_t i = 0; i < n_cust; ++i) {
        const double region = skewed(50);
        const double segment = 1.0 + std::fmod(region, 8.0);
        const double age =
            std::min(80.0, 18.0 + std::fmod(region * 7.0, 55.0) + double(rng.below(8)));
        const double income = std::min(199.0, 2.0 * age + double(rng.below(30)));
        const double visits = std::min(127.0, std::floor(income / 2.0) + double(rng.below(20)));
        apply_statement(schema, ds.full, InsertStmt{0, {region, segment, age, income, visits}});
    }
    for (std::size_t i = 0; i < n_orders; ++i) {
        const double region = skewed(50);
        const double item = 1.0 + std::fmod(region + double(rng.below(2)), 12.0);
        const double month = 1.0 + std::fmod(item + double(rng.below(3)), 12.0);
        const double qty = std::min(40.0, 2.0 * item + 1.0 + double(rng.below(7)));
        const double price = std::min(149.0, 10.0 * item - qty + 10.0 + double(rng.below(12)));
        apply_statement(schema, ds.full, InsertStmt{1, {region, item, month, qty, price}});
    }
    for (std::size_t i = 0; i < n_stock; ++i) {
        const double item = skewed(12);
        const double month = 1.0 + std::fmod(item * 5.0 + double(rng.below(2)), 12.0);
        const double level = std::min(199.0, 15.0 * item + double(rng.below(26)));
        apply_statement(schema, ds.full, InsertStmt{2, {item, month, level}});
    }
    return ds;
}

}  // namespace cardlab::test
