// cardlab: workload generation, training, and evaluation for learned
// cardinality estimation on dynamic workloads.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cardlab/cardlab.hpp"

namespace fs = std::filesystem;
using namespace cardlab;

namespace {

constexpr const char* kEstimateFileHelp =
    "Estimate files: every line is \"<query ordinal> <estimate as integer>\"; "
    "single-relation sub-queries go to single_cards.txt, multi-relation ones to "
    "join_cards.txt, in stream order. The parallel single_sub_queries.txt and "
    "join_sub_queries.txt files carry \"<query ordinal> <sub-query SQL>\" lines.";

struct CommonOpts {
    std::string schema_path;
    std::size_t d_x = 40;
    std::string bin_mode = "equal-width";
    std::string join_variant = "full";
    std::size_t threads = 1;
};

BinMode parse_bin_mode(const std::string& s) {
    if (s == "equal-width") return BinMode::EqualWidth;
    if (s == "equal-depth") return BinMode::EqualDepth;
    throw Error("unknown bin mode: " + s + " (use equal-width or equal-depth)");
}

RowStore load_csv_dir(const Schema& schema, const std::string& dir) {
    RowStore store(schema);
    for (std::uint32_t r = 0; r < schema.relation_count(); ++r) {
        const fs::path p = fs::path(dir) / (schema.relation(r).name + ".csv");
        load_relation_csv_file(schema, store, r, p.string());
    }
    return store;
}

struct TrainingDump {
    std::vector<DbStates> snapshots;
    std::vector<TrainingSample> samples;
    nlohmann::json meta;
};

void write_training_dump(const std::string& dir, const TrainingDump& dump) {
    fs::create_directories(dir);
    {
        std::ofstream out(fs::path(dir) / "snapshots.txt");
        if (!out) throw IoError("cannot write snapshots in " + dir);
        dump_snapshot_pool(out, dump.snapshots);
    }
    {
        std::ofstream out(fs::path(dir) / "samples.txt");
        if (!out) throw IoError("cannot write samples in " + dir);
        dump_samples(out, dump.samples, dump.meta.at("d_q").get<std::size_t>());
    }
    std::ofstream meta(fs::path(dir) / "meta.json");
    meta << dump.meta.dump(2) << "\n";
}

TrainingDump read_training_dump(const std::string& dir) {
    TrainingDump dump;
    {
        std::ifstream in(fs::path(dir) / "meta.json");
        if (!in) throw IoError("missing meta.json in " + dir);
        in >> dump.meta;
    }
    {
        std::ifstream in(fs::path(dir) / "snapshots.txt");
        if (!in) throw IoError("missing snapshots.txt in " + dir);
        dump.snapshots = load_snapshot_pool(in);
    }
    {
        std::ifstream in(fs::path(dir) / "samples.txt");
        if (!in) throw IoError("missing samples.txt in " + dir);
        dump.samples = load_samples(in);
    }
    return dump;
}

int cmd_gen_workload(const CommonOpts& common, const std::string& data_dir,
                     const std::string& kind, std::uint64_t seed, const WorkloadConfig& cfg_in,
                     const std::string& out_dir) {
    Schema schema = Schema::load(common.schema_path);
    RowStore full = load_csv_dir(schema, data_dir);
    WorkloadConfig cfg = cfg_in;
    cfg.kind = workload_kind_from_string(kind);
    Rng rng(seed);
    WorkloadScript script = generate_workload(schema, full, cfg, rng);
    save_workload(schema, script, out_dir);
    std::cout << "workload: " << script.statements.size() << " statements, "
              << script.pack_count() << " query packs, split at " << script.split_index
              << ", initial rows " << script.initial.total_rows() << "\n";
    return 0;
}

int cmd_replay_train(const CommonOpts& common, const std::string& workload_dir,
                     const std::string& out_dir) {
    Schema schema = Schema::load(common.schema_path);
    WorkloadScript script = load_workload(schema, workload_dir);
    QueryFeaturizer featurizer(schema, join_variant_from_string(common.join_variant));
    const BinMode mode = parse_bin_mode(common.bin_mode);

    TrainingDump dump;
    ReplaySinks sinks;
    sinks.on_pack = [&](const PackEvent& ev, const DbStates& states) {
        if (ev.evaluation) return;
        const std::uint32_t snap_id = static_cast<std::uint32_t>(dump.snapshots.size());
        dump.snapshots.push_back(states);
        for (std::size_t s = 0; s < ev.pack->sub_queries.size(); ++s) {
            TrainingSample sample;
            sample.snapshot = snap_id;
            sample.query = featurizer.featurize(ev.pack->sub_queries[s]).full();
            sample.label_log_card = log_card_label(ev.true_cards[s]);
            dump.samples.push_back(std::move(sample));
        }
    };
    replay(schema, script, common.d_x, mode, sinks);

    dump.meta = {{"T", schema.total_attributes()},
                 {"d_x", common.d_x},
                 {"d_q", featurizer.query_width()},
                 {"bin_mode", common.bin_mode},
                 {"join_variant", common.join_variant},
                 {"delta", featurizer.pattern_count()}};
    write_training_dump(out_dir, dump);
    std::cout << "training dump: " << dump.samples.size() << " samples over "
              << dump.snapshots.size() << " snapshots (d_q = " << featurizer.query_width()
              << ")\n";
    return 0;
}

int cmd_train(const CommonOpts& common, const std::string& samples_dir, const std::string& model_kind,
              std::uint64_t seed, const TrainConfig& tcfg_in, std::size_t n_enc, std::size_t n_ana,
              std::size_t heads, std::size_t hidden, std::size_t layers, const std::string& out_path,
              const std::string& history_path) {
    TrainingDump dump = read_training_dump(samples_dir);
    const std::size_t T = dump.meta.at("T").get<std::size_t>();
    const std::size_t d_x = dump.meta.at("d_x").get<std::size_t>();
    const std::size_t d_q = dump.meta.at("d_q").get<std::size_t>();

    std::unique_ptr<CardModel> model;
    if (model_kind == "attn") {
        model = std::make_unique<AttnCardNet>(AttnModelDims{T, d_x, d_q, n_enc, n_ana, heads},
                                              Rng(seed));
    } else if (model_kind == "mlp") {
        model = std::make_unique<MlpCardNet>(MlpModelDims{T, d_x, d_q, hidden, layers}, Rng(seed));
    } else {
        throw Error("unknown model kind: " + model_kind + " (use attn or mlp)");
    }
    std::cout << "model " << model_kind << " with " << model->param_count() << " parameters, "
              << dump.samples.size() << " samples\n";

    TrainConfig tcfg = tcfg_in;
    tcfg.seed = seed;
    tcfg.threads = common.threads;
    auto snapshots = snapshot_matrices(dump.snapshots);
    Trainer trainer(*model, snapshots, dump.samples, tcfg);
    TrainOutcome outcome = trainer.run(&std::cout);
    std::cout << "best validation loss " << outcome.best_val_loss << " at epoch "
              << outcome.best_epoch << (outcome.stopped_early ? " (early stop)" : "") << "\n";

    nlohmann::json manifest = model->manifest();
    manifest["bin_mode"] = dump.meta.at("bin_mode");
    manifest["join_variant"] = dump.meta.at("join_variant");
    manifest["seed"] = seed;
    save_checkpoint(out_path, model->params(), manifest);

    const std::string hist = history_path.empty() ? out_path + ".history.csv" : history_path;
    std::ofstream out(hist);
    if (!out) throw IoError("cannot write history: " + hist);
    write_history_csv(out, outcome.history);
    return 0;
}

struct EvalSetup {
    Schema schema;
    WorkloadScript script;
    std::size_t d_x = 40;
    BinMode bin_mode = BinMode::EqualWidth;
    std::unique_ptr<CardModel> model;
    std::unique_ptr<QueryFeaturizer> featurizer;
    std::unique_ptr<Estimator> estimator;
};

EvalSetup make_eval_setup(const CommonOpts& common, const std::string& workload_dir,
                          const std::string& estimator_name, const std::string& model_path,
                          double sampling_ratio, std::size_t pg_bins, std::uint64_t seed) {
    EvalSetup setup;
    setup.schema = Schema::load(common.schema_path);
    setup.script = load_workload(setup.schema, workload_dir);
    setup.d_x = common.d_x;
    setup.bin_mode = parse_bin_mode(common.bin_mode);

    std::string name = estimator_name;
    if (name.empty()) name = model_path.empty() ? "optimal" : "model";

    if (name == "model" || name == "attn" || name == "mlp") {
        if (model_path.empty()) throw Error("--model is required for a learned estimator");
        Checkpoint ck = load_checkpoint(model_path);
        setup.model = model_from_checkpoint(ck);
        setup.d_x = ck.manifest.at("d_x").get<std::size_t>();
        setup.bin_mode = parse_bin_mode(ck.manifest.value("bin_mode", common.bin_mode));
        setup.featurizer = std::make_unique<QueryFeaturizer>(
            setup.schema,
            join_variant_from_string(ck.manifest.value("join_variant", common.join_variant)));
        if (setup.featurizer->query_width() != ck.manifest.at("d_q").get<std::size_t>())
            throw Error("schema/checkpoint mismatch: query featurization width differs");
        if (setup.schema.total_attributes() != ck.manifest.at("T").get<std::size_t>())
            throw Error("schema/checkpoint mismatch: attribute count differs");
        setup.estimator = std::make_unique<ModelEstimator>(
            ck.manifest.at("model").get<std::string>(), *setup.model, *setup.featurizer);
    } else if (name == "pg") {
        setup.estimator = std::make_unique<PgIndepEstimator>(pg_bins);
    } else if (name == "unisamp") {
        setup.estimator = std::make_unique<UniSampEstimator>(sampling_ratio, seed);
    } else if (name == "optimal") {
        setup.estimator = std::make_unique<OptimalEstimator>();
    } else {
        throw Error("unknown estimator: " + name);
    }
    return setup;
}

int cmd_estimate(EvalSetup setup, const std::string& out_dir) {
    EstimatorReport report =
        evaluate_estimator(setup.schema, setup.script, setup.d_x, setup.bin_mode, *setup.estimator);
    emit_estimate_files(report, out_dir);
    std::cout << report.rows.size() << " sub-query estimates written to " << out_dir << "\n";
    return 0;
}

int cmd_evaluate(EvalSetup setup, const std::string& out_dir) {
    EstimatorReport report =
        evaluate_estimator(setup.schema, setup.script, setup.d_x, setup.bin_mode, *setup.estimator);
    fs::create_directories(out_dir);
    emit_estimate_files(report, out_dir);
    {
        std::ofstream out(fs::path(out_dir) / "report.csv");
        if (!out) throw IoError("cannot write report.csv in " + out_dir);
        write_report_csv(out, report);
    }
    {
        std::ofstream out(fs::path(out_dir) / "summary.txt");
        write_report_summary(out, {report});
    }
    {
        // wall-clock numbers vary run to run, so they live outside report.csv
        std::ofstream out(fs::path(out_dir) / "timings.txt");
        out << "build_seconds " << report.build_seconds << "\n"
            << "mean_latency_ms " << report.mean_latency_ms << "\n";
    }
    write_report_summary(std::cout, {report});
    return 0;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t model_trials) {
    bool ok = true;
    std::cout << "primitive gradient checks (threshold 1e-6):\n";
    for (const auto& [name, err] : gradcheck::primitive_checks(Rng(seed))) {
        const bool pass = err < 1e-6;
        ok = ok && pass;
        std::printf("  %-16s max rel err %.3e %s\n", name.c_str(), err, pass ? "ok" : "FAIL");
    }
    std::cout << "full model checks at tiny dims (threshold 1e-4):\n";
    double worst = 0.0;
    for (std::size_t trial = 0; trial < model_trials; ++trial) {
        AttnModelDims dims{3, 4, 8, 1, 1, 2};
        AttnCardNet net(dims, Rng(seed + 17 * trial + 1));
        Rng data_rng(seed + 1000 + trial);
        const auto rep = gradcheck::check_model(net, data_rng);
        worst = std::max(worst, rep.max_rel_err);
        if (rep.max_rel_err >= 1e-4) {
            ok = false;
            std::printf("  trial %zu FAIL: %.3e at %s\n", trial, rep.max_rel_err,
                        rep.worst.c_str());
        }
    }
    std::printf("  %zu trials, worst rel err %.3e %s\n", model_trials, worst,
                worst < 1e-4 ? "ok" : "FAIL");
    if (!ok) {
        std::cout << "gradient check FAILED\n";
        return 4;
    }
    std::cout << "gradient check passed\n";
    return 0;
}

int cmd_report(const std::vector<std::string>& csv_paths) {
    std::vector<EstimatorReport> reports;
    for (const auto& path : csv_paths) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open report: " + path);
        EstimatorReport rep;
        rep.estimator = fs::path(path).parent_path().filename().string();
        if (rep.estimator.empty()) rep.estimator = fs::path(path).stem().string();
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            SubQueryRecord rec;
            std::string kind;
            std::istringstream ls(line);
            std::string cell;
            std::getline(ls, cell, ',');
            rec.ordinal = std::stoull(cell);
            std::getline(ls, kind, ',');
            rec.single = kind == "single";
            std::getline(ls, cell, ',');
            rec.true_card = std::stod(cell);
            std::getline(ls, cell, ',');
            rec.estimate = std::stod(cell);
            std::getline(ls, cell, ',');
            rec.q_err = std::stod(cell);
            rep.rows.push_back(std::move(rec));
        }
        reports.push_back(std::move(rep));
    }
    write_report_summary(std::cout, reports);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cardlab: attention-based learned cardinality estimation lab"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand name
    app.set_config("--config", "", "flat key=value config file; flags override");
    app.footer(std::string(kEstimateFileHelp));

    CommonOpts common;
    app.add_option("--schema", common.schema_path, "schema JSON file")->configurable(true);
    app.add_option("--dx", common.d_x, "histogram bins per attribute");
    app.add_option("--bin-mode", common.bin_mode, "equal-width | equal-depth");
    app.add_option("--join-feat", common.join_variant, "join featurization: full | simple");
    app.add_option("--threads", common.threads, "worker thread cap");

    std::uint64_t seed = 0;
    app.add_option("--seed", seed, "random seed (required; no wall-clock entropy)");

    // gen-workload
    auto* gen = app.add_subcommand("gen-workload", "generate a dynamic workload script");
    std::string data_dir, kind = "insert-heavy", out_dir;
    WorkloadConfig wcfg;
    gen->add_option("--data", data_dir, "directory of <relation>.csv files")->required();
    gen->add_option("--kind", kind, "insert-heavy | update-heavy | dist-shift | static");
    gen->add_option("--dml-count", wcfg.dml_count, "total DML statements");
    gen->add_option("--train-queries", wcfg.train_queries, "distinct training queries");
    gen->add_option("--eval-queries", wcfg.eval_queries, "evaluation queries");
    gen->add_option("--train-copies", wcfg.train_copies, "copies of each training query");
    gen->add_option("--min-rho", wcfg.min_rho, "minimum changing rate before evaluation packs");
    gen->add_option("--out", out_dir, "output workload directory")->required();

    // replay-train
    auto* rt = app.add_subcommand("replay-train", "replay the training part into samples");
    std::string workload_dir, samples_out;
    rt->add_option("--workload", workload_dir, "workload directory")->required();
    rt->add_option("--out", samples_out, "output samples directory")->required();

    // train
    auto* tr = app.add_subcommand("train", "train an estimator on a sample dump");
    std::string samples_dir, model_kind = "attn", ckpt_out, history_out;
    std::size_t n_enc = 4, n_ana = 4, heads = 8, hidden = 256, layers = 3;
    TrainConfig tcfg;
    tr->add_option("--samples", samples_dir, "samples directory from replay-train")->required();
    tr->add_option("--model", model_kind, "attn | mlp");
    tr->add_option("--n-enc", n_enc, "encoder layers");
    tr->add_option("--n-ana", n_ana, "analyzer layers");
    tr->add_option("--heads", heads, "attention heads");
    tr->add_option("--hidden", hidden, "mlp hidden width");
    tr->add_option("--layers", layers, "mlp hidden layers");
    tr->add_option("--max-epochs", tcfg.max_epochs, "epoch cap");
    tr->add_option("--batch-size", tcfg.batch_size, "batch size");
    tr->add_option("--learning-rate", tcfg.learning_rate, "adam learning rate");
    tr->add_option("--patience", tcfg.patience, "early-stopping patience");
    tr->add_option("--validation-fraction", tcfg.validation_fraction, "validation split");
    tr->add_option("--out", ckpt_out, "output checkpoint path")->required();
    tr->add_option("--history", history_out, "history CSV path");

    // estimate / evaluate
    std::string est_workload, est_name, model_path, est_out;
    double sampling_ratio = 0.1;
    std::size_t pg_bins = 100;
    auto add_eval_opts = [&](CLI::App* cmd) {
        cmd->add_option("--workload", est_workload, "workload directory")->required();
        cmd->add_option("--estimator", est_name, "attn | mlp | pg | unisamp | optimal");
        cmd->add_option("--model", model_path, "checkpoint for learned estimators");
        cmd->add_option("--sampling-ratio", sampling_ratio, "unisamp sampling probability");
        cmd->add_option("--pg-bins", pg_bins, "pg baseline histogram bins");
        cmd->add_option("--out", est_out, "output directory")->required();
    };
    auto* est = app.add_subcommand("estimate",
                                   "write estimate files for the evaluation sub-queries");
    add_eval_opts(est);
    auto* ev = app.add_subcommand("evaluate", "score an estimator and write report + files");
    add_eval_opts(ev);

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    std::size_t gc_trials = 20;
    gc->add_option("--trials", gc_trials, "full-model trials");

    // report
    auto* rep = app.add_subcommand("report", "summarize one or more report.csv files");
    std::vector<std::string> report_csvs;
    rep->add_option("--in", report_csvs, "report.csv paths")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_workload(common, data_dir, kind, seed, wcfg, out_dir);
        if (rt->parsed()) return cmd_replay_train(common, workload_dir, samples_out);
        if (tr->parsed())
            return cmd_train(common, samples_dir, model_kind, seed, tcfg, n_enc, n_ana, heads,
                             hidden, layers, ckpt_out, history_out);
        if (est->parsed())
            return cmd_estimate(make_eval_setup(common, est_workload, est_name, model_path,
                                                sampling_ratio, pg_bins, seed),
                                est_out);
        if (ev->parsed())
            return cmd_evaluate(make_eval_setup(common, est_workload, est_name, model_path,
                                                sampling_ratio, pg_bins, seed),
                                est_out);
        if (gc->parsed()) return cmd_gradcheck(seed, gc_trials);
        if (rep->parsed()) return cmd_report(report_csvs);
    } catch (const IoError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const InsufficientDataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const UnknownRelationError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const DomainViolationError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 2;
}
