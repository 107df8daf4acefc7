#pragma once

// Experiment configuration and the command implementations behind the CLI.

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "polar_probe/bundle.hpp"
#include "polar_probe/decode.hpp"
#include "polar_probe/error.hpp"
#include "polar_probe/evaluate.hpp"
#include "polar_probe/probe.hpp"
#include "polar_probe/report.hpp"
#include "polar_probe/synth.hpp"
#include "polar_probe/train.hpp"
#include "polar_probe/treebank.hpp"

namespace polar {

namespace fs = std::filesystem;

inline constexpr const char* kDataRootEnv = "POLARPROBE_DATA_ROOT";

struct DataPaths {
    fs::path train;
    fs::path validation;
    fs::path test;
    fs::path bundle;
};

struct ReportOptions {
    bool csv = true;
    bool json = true;
    bool svg = true;
    bool predictions = true;
    std::size_t cosine_per_label = 40;
    std::size_t pca_per_label = 150;
};

struct ExperimentConfig {
    DataPaths data;
    fs::path output_dir = "runs";
    std::vector<int> layers = {0};
    TrainConfig train;
    EvalOptions eval;
    ReportOptions report;
    bool filter_web_addresses = true;
    std::vector<int> sweep_probe_dims;
    int jobs = 1;

    int layer() const { return layers.front(); }
};

// ---------------------------------------------------------------------------
// Config file parsing. Relative data paths resolve against $POLARPROBE_DATA_ROOT
// when it is set, otherwise against the directory holding the config file.

namespace detail {

inline fs::path resolve_data_path(const std::string& p, const fs::path& base) {
    fs::path path(p);
    if (path.empty() || path.is_absolute()) return path;
    if (const char* root = std::getenv(kDataRootEnv); root && *root) return fs::path(root) / path;
    return base / path;
}

inline void reject_unknown(const nlohmann::json& j, const std::string& where,
                           std::initializer_list<const char*> known) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || key == k;
        if (!ok) throw ConfigError("unknown key '" + (where.empty() ? "" : where + ".") + key + "'");
    }
}

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& field, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        field = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("bad value for '" + (where.empty() ? "" : where + ".") + key + "'");
    }
}

inline std::vector<int> parse_layers(const nlohmann::json& j) {
    if (j.is_number_integer()) return {j.get<int>()};
    if (j.is_array()) {
        std::vector<int> out;
        for (const auto& v : j) {
            if (!v.is_number_integer()) throw ConfigError("layers must be integers");
            out.push_back(v.get<int>());
        }
        if (out.empty()) throw ConfigError("layers must not be empty");
        return out;
    }
    if (j.is_object() && j.contains("from") && j.contains("to")) {
        const int a = j.at("from").get<int>();
        const int b = j.at("to").get<int>();
        if (b < a) throw ConfigError("layer range 'to' is below 'from'");
        std::vector<int> out;
        for (int l = a; l <= b; ++l) out.push_back(l);
        return out;
    }
    throw ConfigError("layers must be an integer, a list, or {\"from\", \"to\"}");
}

/// Sets a dotted key ("train.lambda") to a value parsed as JSON, or as a string.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    nlohmann::json value;
    try {
        value = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception&) {
        value = raw;
    }
    nlohmann::json* node = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError("override key '" + key + "' is malformed");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            break;
        }
        if (!node->contains(part) || !(*node)[part].is_object()) (*node)[part] = nlohmann::json::object();
        node = &(*node)[part];
        start = dot + 1;
    }
}

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j, const fs::path& base = ".") {
    using detail::read_field;
    detail::reject_unknown(j, "", {"data", "output_dir", "layer", "layers", "train", "metrics",
                                   "report", "filter_web_addresses", "sweep", "jobs", "eval"});
    ExperimentConfig c;
    if (j.contains("data")) {
        const auto& d = j.at("data");
        detail::reject_unknown(d, "data", {"train", "validation", "test", "bundle"});
        std::string s;
        auto path = [&](const char* key, fs::path& out) {
            s.clear();
            read_field(d, key, s, "data");
            if (!s.empty()) out = detail::resolve_data_path(s, base);
        };
        path("train", c.data.train);
        path("validation", c.data.validation);
        path("test", c.data.test);
        path("bundle", c.data.bundle);
    }
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("layer") && j.contains("layers")) throw ConfigError("give either 'layer' or 'layers'");
    if (j.contains("layer")) c.layers = detail::parse_layers(j.at("layer"));
    if (j.contains("layers")) c.layers = detail::parse_layers(j.at("layers"));
    if (j.contains("train")) {
        const auto& t = j.at("train");
        detail::reject_unknown(t, "train", {"kind", "lambda", "learning_rate", "batch_sentences", "epochs",
                                            "probe_dim", "pair_cap", "seed", "selection"});
        std::string kind, selection;
        read_field(t, "kind", kind, "train");
        if (!kind.empty()) c.train.kind = parse_probe_kind(kind);
        read_field(t, "lambda", c.train.lambda, "train");
        read_field(t, "learning_rate", c.train.learning_rate, "train");
        read_field(t, "batch_sentences", c.train.batch_sentences, "train");
        read_field(t, "epochs", c.train.epochs, "train");
        read_field(t, "probe_dim", c.train.probe_dim, "train");
        read_field(t, "pair_cap", c.train.pair_cap, "train");
        read_field(t, "seed", c.train.seed, "train");
        read_field(t, "selection", selection, "train");
        if (!selection.empty()) c.train.selection = parse_selection(selection);
        // an explicit lambda of zero on a polar probe is the structural probe
        if (c.train.kind == ProbeKind::polar && c.train.lambda == 0.0) c.train.kind = ProbeKind::structural;
    }
    c.eval.seed = c.train.seed;
    if (j.contains("metrics")) {
        const auto& m = j.at("metrics");
        detail::reject_unknown(m, "metrics", {"exclude_punct", "auc_pair_budget", "auc_relations",
                                              "length_buckets", "depth_buckets"});
        read_field(m, "exclude_punct", c.eval.metric.exclude_punct, "metrics");
        read_field(m, "auc_pair_budget", c.eval.auc_pair_budget, "metrics");
        read_field(m, "auc_relations", c.eval.auc_relations, "metrics");
        read_field(m, "length_buckets", c.eval.length_bounds, "metrics");
        read_field(m, "depth_buckets", c.eval.depth_bounds, "metrics");
        if (c.eval.auc_pair_budget == 0) throw ConfigError("metrics.auc_pair_budget must be positive");
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        detail::reject_unknown(e, "eval", {"gold_injection"});
        read_field(e, "gold_injection", c.eval.gold_injection, "eval");
    }
    if (j.contains("report")) {
        const auto& r = j.at("report");
        detail::reject_unknown(r, "report", {"formats", "predictions", "cosine_per_label", "pca_per_label"});
        if (r.contains("formats")) {
            c.report.csv = c.report.json = c.report.svg = false;
            for (const auto& f : r.at("formats")) {
                const std::string s = f.get<std::string>();
                if (s == "csv") c.report.csv = true;
                else if (s == "json") c.report.json = true;
                else if (s == "svg") c.report.svg = true;
                else throw ConfigError("unknown report format '" + s + "'");
            }
        }
        read_field(r, "predictions", c.report.predictions, "report");
        read_field(r, "cosine_per_label", c.report.cosine_per_label, "report");
        read_field(r, "pca_per_label", c.report.pca_per_label, "report");
    }
    read_field(j, "filter_web_addresses", c.filter_web_addresses, "");
    if (j.contains("sweep")) {
        const auto& s = j.at("sweep");
        detail::reject_unknown(s, "sweep", {"probe_dims"});
        read_field(s, "probe_dims", c.sweep_probe_dims, "sweep");
    }
    read_field(j, "jobs", c.jobs, "");
    if (c.jobs < 1) throw ConfigError("jobs must be at least 1");
    c.train.validate();
    return c;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
    std::vector<std::string> formats;
    if (c.report.csv) formats.push_back("csv");
    if (c.report.json) formats.push_back("json");
    if (c.report.svg) formats.push_back("svg");
    return {
        {"data",
         {{"train", c.data.train.string()},
          {"validation", c.data.validation.string()},
          {"test", c.data.test.string()},
          {"bundle", c.data.bundle.string()}}},
        {"output_dir", c.output_dir.string()},
        {"layers", c.layers},
        {"train",
         {{"kind", std::string(to_string(c.train.kind))},
          {"lambda", c.train.effective_lambda()},
          {"learning_rate", c.train.learning_rate},
          {"batch_sentences", c.train.batch_sentences},
          {"epochs", c.train.epochs},
          {"probe_dim", c.train.probe_dim},
          {"pair_cap", c.train.pair_cap},
          {"seed", c.train.seed},
          {"selection", c.train.selection == SelectionCriterion::validation_las ? "las" : "loss"}}},
        {"metrics",
         {{"exclude_punct", c.eval.metric.exclude_punct},
          {"auc_pair_budget", c.eval.auc_pair_budget},
          {"auc_relations", c.eval.auc_relations},
          {"length_buckets", c.eval.length_bounds},
          {"depth_buckets", c.eval.depth_bounds}}},
        {"eval", {{"gold_injection", c.eval.gold_injection}}},
        {"report",
         {{"formats", formats},
          {"predictions", c.report.predictions},
          {"cosine_per_label", c.report.cosine_per_label},
          {"pca_per_label", c.report.pca_per_label}}},
        {"filter_web_addresses", c.filter_web_addresses},
        {"sweep", {{"probe_dims", c.sweep_probe_dims}}},
        {"jobs", c.jobs},
    };
}

/// Reads a config file and applies key=value overrides before interpretation.
inline ExperimentConfig load_config(const fs::path& path, const std::vector<std::string>& overrides = {}) {
    nlohmann::json j = nlohmann::json::object();
    fs::path base = fs::current_path();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot read config " + path.string());
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config " + path.string() + ": " + e.what());
        }
        base = fs::absolute(path).parent_path();
    }
    for (const auto& o : overrides) detail::apply_override(j, o);
    return config_from_json(j, base);
}

// ---------------------------------------------------------------------------
// Run directories

/// Creates `explicit_dir` if given, else <output_dir>/<command>-<UTC timestamp>[-n],
/// and writes the resolved config snapshot into it.
inline fs::path make_run_dir(const ExperimentConfig& cfg, const std::string& command,
                             const fs::path& explicit_dir = {}) {
    fs::path dir = explicit_dir;
    if (dir.empty()) {
        const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        std::tm tm{};
        gmtime_r(&now, &tm);
        std::ostringstream stamp;
        stamp << command << '-' << std::put_time(&tm, "%Y%m%d-%H%M%S");
        dir = cfg.output_dir / stamp.str();
        for (int n = 2; fs::exists(dir); ++n) dir = cfg.output_dir / (stamp.str() + "-" + std::to_string(n));
    }
    fs::create_directories(dir);
    std::ofstream snap(dir / "config.json");
    if (!snap) throw IoError("cannot write " + (dir / "config.json").string());
    snap << to_json(cfg).dump(2) << '\n';
    return dir;
}

// ---------------------------------------------------------------------------
// Data loading

struct LoadedData {
    Splits splits;
    std::vector<SplitCount> inventory;
};

inline std::vector<DepSentence> load_split(const fs::path& path, const std::string& name, bool filter,
                                           std::vector<SplitCount>& inventory) {
    if (path.empty()) throw ConfigError("data." + name + " is not set");
    if (!fs::exists(path)) throw IoError(name + " split not found: " + path.string());
    auto parsed = read_conllu_file(path.string());
    SplitCount row{name, parsed.size(), 0, 0};
    if (filter) parsed = filter_sentences(parsed);
    row.kept = parsed.size();
    for (const auto& s : parsed) row.words += s.size();
    inventory.push_back(row);
    return parsed;
}

inline LoadedData load_data(const ExperimentConfig& cfg, bool with_validation, bool with_test) {
    LoadedData d;
    d.splits.train = load_split(cfg.data.train, "train", cfg.filter_web_addresses, d.inventory);
    if (with_validation)
        d.splits.validation = load_split(cfg.data.validation, "validation", cfg.filter_web_addresses, d.inventory);
    if (with_test) d.splits.test = load_split(cfg.data.test, "test", cfg.filter_web_addresses, d.inventory);
    return d;
}

inline Bundle open_bundle(const ExperimentConfig& cfg) {
    if (cfg.data.bundle.empty()) throw ConfigError("data.bundle is not set");
    if (!fs::is_directory(cfg.data.bundle))
        throw IoError("bundle directory not found: " + cfg.data.bundle.string());
    return read_bundle(cfg.data.bundle);
}

inline void require_coverage(const Bundle& bundle, const std::vector<DepSentence>& split,
                             const std::string& name) {
    const auto issues = cross_validate(bundle, split);
    if (!issues.empty())
        throw ValidationError("coverage", name + " sentence " + issues.front().sentence_id + ": " +
                                              issues.front().problem);
}

// ---------------------------------------------------------------------------
// train / evaluate

struct TrainOutcome {
    TrainResult result;
    fs::path probe_path;
};

inline TrainOutcome run_train(const ExperimentConfig& cfg, const LoadedData& data, const Bundle& bundle,
                              const fs::path& dir, std::ostream* log = nullptr) {
    const int layer = cfg.layer();
    if (!bundle.has_layer(layer))
        throw ValidationError("layers", "layer " + std::to_string(layer) + " not in bundle");
    require_coverage(bundle, data.splits.train, "train");
    require_coverage(bundle, data.splits.validation, "validation");
    TrainOutcome out;
    out.result = train(cfg.train, data.splits, bundle, layer, [&](const EpochLog& r) {
        if (log)
            *log << "epoch " << r.epoch << "  train L_S " << r.train_structural << "  L_A "
                 << r.train_angular << "  val L_S " << r.val_structural << "  L_A " << r.val_angular
                 << '\n';
    });
    out.probe_path = dir / "probe.bin";
    save_probe(out.result.probe, out.probe_path);
    {
        std::ofstream f(dir / "training_log.csv");
        write_training_log_csv(f, out.result.log);
    }
    {
        std::ofstream f(dir / "inventory.csv");
        write_inventory_csv(f, data.inventory);
    }
    return out;
}

/// Train-only command: probe.bin, training_log.csv, inventory.csv in the run directory.
inline TrainOutcome cmd_train(const ExperimentConfig& cfg, const fs::path& dir, std::ostream* log = nullptr) {
    const Bundle bundle = open_bundle(cfg);
    const LoadedData data = load_data(cfg, true, false);
    return run_train(cfg, data, bundle, dir, log);
}

namespace detail {

inline std::map<std::string, std::vector<Vector>> projected_edges_by_label(const LinearProbe& probe,
                                                                            const ProbeDataset& ds,
                                                                            const MetricOptions& opt,
                                                                            const std::vector<DepSentence>& gold) {
    std::map<std::string, std::vector<Vector>> out;
    for (std::size_t i = 0; i < ds.sentences.size(); ++i) {
        const auto& d = ds.sentences[i];
        const Eigen::MatrixXd p = d.words.cast<double>() * probe.matrix.transpose();
        for (const auto& e : d.edges) {
            if (!scorable_dependent(gold[i], e.dep + 1, opt)) continue;
            Vector z = (p.row(e.head) - p.row(e.dep)).transpose();
            if (z.norm() == 0.0) continue;
            out[ds.labels[static_cast<std::size_t>(e.label)]].push_back(std::move(z));
        }
    }
    return out;
}

inline void write_strata_csv(std::ostream& out, const EvalReport& r) {
    out.precision(10);
    out << "axis,lo,hi,sentences,uuas,las,type_accuracy,direction_accuracy,balanced_accuracy\n";
    auto cell = [&](const std::optional<double>& v) {
        out << ',';
        if (v) out << *v;
    };
    for (const auto* strata : {&r.by_length, &r.by_depth})
        for (const auto& s : *strata) {
            out << to_string(s.axis) << ',' << s.lo << ',' << s.hi << ','
                << (s.metrics ? s.metrics->sentences : 0);
            if (s.metrics) {
                cell(s.metrics->uuas.value());
                cell(s.metrics->las.value());
                cell(s.metrics->type_accuracy.value());
                cell(s.metrics->direction_accuracy.value());
                cell(s.metrics->balanced_accuracy);
            } else {
                out << ",,,,,";
            }
            out << '\n';
        }
}

}  // namespace detail

/// Builds prototypes from the training split, decodes the test split and writes
/// reports and figures into `dir`.
inline EvalReport run_evaluate(const ExperimentConfig& cfg, const LoadedData& data, const Bundle& bundle,
                               const LinearProbe& probe, const fs::path& dir) {
    check_probe(probe);
    const int layer = probe.layer;
    if (!bundle.has_layer(layer))
        throw ValidationError("layers", "probe layer " + std::to_string(layer) + " not in bundle");
    if (probe.input_dim() != bundle.manifest().hidden_dim)
        throw DimensionError("probe expects width " + std::to_string(probe.input_dim()) +
                             ", bundle hidden_dim is " + std::to_string(bundle.manifest().hidden_dim));
    if (data.splits.test.empty()) throw ConfigError("test split is empty");
    require_coverage(bundle, data.splits.train, "train");
    require_coverage(bundle, data.splits.test, "test");

    const auto labels = label_inventory(data.splits.train);
    const ProbeDataset tr = make_dataset(data.splits.train, bundle, layer, labels);
    const ProbeDataset te = make_dataset(data.splits.test, bundle, layer, labels);
    const PrototypeBuild built = build_prototypes(probe, canonical_edges(tr), kDefaultPrototypePool,
                                                  cfg.train.seed, labels);
    EvalReport rep = evaluate(probe, built.bank, data.splits.test, te, cfg.eval);

    save_prototypes(built.bank, dir / "prototypes.bin");
    if (cfg.report.json) {
        nlohmann::json j = to_json(rep);
        j["probe"] = {{"kind", std::string(to_string(probe.kind))}, {"lambda", probe.lambda},
                      {"layer", probe.layer}, {"k", probe.input_dim()}, {"k_probe", probe.output_dim()},
                      {"selected_epoch", probe.selected_epoch}};
        j["dropped_labels"] = built.dropped;
        j["gold_injection"] = cfg.eval.gold_injection;
        std::ofstream f(dir / "report.json");
        f << j.dump(2) << '\n';
    }
    if (cfg.report.csv) {
        std::ofstream f(dir / "report.csv");
        write_report_csv(f, rep);
        std::ofstream s(dir / "strata.csv");
        detail::write_strata_csv(s, rep);
    }
    if (cfg.report.predictions) {
        std::vector<DepSentence> pred;
        for (std::size_t i = 0; i < rep.predictions.size(); ++i)
            pred.push_back(with_predicted_heads(data.splits.test[i], rep.predictions[i]));
        write_conllu_file((dir / "predictions.conllu").string(), pred);
    }
    if (cfg.report.svg || cfg.report.csv) {
        const auto by_label = detail::projected_edges_by_label(probe, te, cfg.eval.metric, data.splits.test);
        if (!by_label.empty()) {
            const CosineMatrix cm = cosine_matrix(by_label, cfg.report.cosine_per_label, cfg.train.seed);
            // PCA on a per-label subsample keeps the figure readable
            std::map<std::string, std::vector<Vector>> sample;
            Rng rng(cfg.train.seed ^ 0x7CA5ULL);
            for (const auto& [label, edges] : by_label) {
                auto picks = sample_without_replacement(rng, edges.size(), cfg.report.pca_per_label);
                std::sort(picks.begin(), picks.end());
                for (auto i : picks) sample[label].push_back(edges[i]);
            }
            std::size_t total = 0;
            for (const auto& [label, edges] : sample) total += edges.size();
            const std::string title = std::string(to_string(probe.kind)) + " probe, layer " +
                                      std::to_string(layer) + ", k''=" + std::to_string(probe.output_dim());
            if (cfg.report.csv) {
                std::ofstream f(dir / "cosine_matrix.csv");
                write_cosine_csv(f, cm);
            }
            if (cfg.report.svg) {
                std::ofstream f(dir / "cosine_matrix.svg");
                write_cosine_svg(f, cm, "|cos| between edge vectors, " + title);
            }
            if (total >= 2 && probe.output_dim() >= 2) {
                const auto [pts, pca] = pca_scatter(sample);
                if (cfg.report.csv) {
                    std::ofstream f(dir / "pca.csv");
                    write_scatter_csv(f, pts);
                }
                if (cfg.report.svg) {
                    std::ofstream f(dir / "pca.svg");
                    write_scatter_svg(f, pts, "PCA of edge vectors, " + title,
                                      {pca.explained_ratio[0], pca.explained_ratio[1]});
                }
            }
        }
    }
    return rep;
}

inline EvalReport cmd_evaluate(const ExperimentConfig& cfg, const fs::path& probe_path, const fs::path& dir) {
    if (!fs::exists(probe_path)) throw IoError("probe file not found: " + probe_path.string());
    const LinearProbe probe = load_probe(probe_path);
    const Bundle bundle = open_bundle(cfg);
    const LoadedData data = load_data(cfg, false, true);
    return run_evaluate(cfg, data, bundle, probe, dir);
}

inline PrototypeBuild cmd_prototypes(const ExperimentConfig& cfg, const fs::path& probe_path,
                                     const fs::path& out_path) {
    if (!fs::exists(probe_path)) throw IoError("probe file not found: " + probe_path.string());
    const LinearProbe probe = load_probe(probe_path);
    const Bundle bundle = open_bundle(cfg);
    const LoadedData data = load_data(cfg, false, false);
    require_coverage(bundle, data.splits.train, "train");
    if (probe.input_dim() != bundle.manifest().hidden_dim)
        throw DimensionError("probe expects width " + std::to_string(probe.input_dim()) +
                             ", bundle hidden_dim is " + std::to_string(bundle.manifest().hidden_dim));
    const auto labels = label_inventory(data.splits.train);
    const ProbeDataset tr = make_dataset(data.splits.train, bundle, probe.layer, labels);
    PrototypeBuild built = build_prototypes(probe, canonical_edges(tr), kDefaultPrototypePool, cfg.train.seed, labels);
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    save_prototypes(built.bank, out_path);
    return built;
}

// ---------------------------------------------------------------------------
// sweep

enum class SweepAxis { layer, probe_dim };

inline SweepAxis parse_sweep_axis(std::string_view s) {
    if (s == "layer") return SweepAxis::layer;
    if (s == "probe_dim") return SweepAxis::probe_dim;
    throw ConfigError("unknown sweep axis '" + std::string(s) + "' (layer | probe_dim)");
}

struct SweepRow {
    int value = 0;
    bool ok = false;
    std::string error;
    int selected_epoch = -1;
    std::optional<CoreMetrics> metrics;
    std::optional<double> auc;
};

inline SweepRow sweep_cycle(ExperimentConfig cfg, SweepAxis axis, int value, const LoadedData& data,
                            const Bundle& bundle, const fs::path& dir) {
    SweepRow row;
    row.value = value;
    try {
        if (axis == SweepAxis::layer) cfg.layers = {value};
        else cfg.train.probe_dim = value;
        cfg.train.validate();
        fs::create_directories(dir);
        const TrainOutcome t = run_train(cfg, data, bundle, dir);
        const EvalReport rep = run_evaluate(cfg, data, bundle, t.result.probe, dir);
        row.selected_epoch = t.result.probe.selected_epoch;
        row.metrics = rep.metrics;
        if (rep.auc) row.auc = rep.auc->auc;
        row.ok = true;
    } catch (const std::exception& e) {
        row.error = e.what();
    }
    return row;
}

inline void write_sweep_csv(std::ostream& out, SweepAxis axis, const std::vector<SweepRow>& rows) {
    out.precision(10);
    out << (axis == SweepAxis::layer ? "layer" : "probe_dim")
        << ",status,selected_epoch,uuas,las,type_accuracy,direction_accuracy,balanced_accuracy,auc,"
           "root_identification,error\n";
    auto cell = [&](const std::optional<double>& v) {
        out << ',';
        if (v) out << *v;
    };
    for (const auto& r : rows) {
        out << r.value << ',' << (r.ok ? "ok" : "failed") << ',';
        if (r.ok) out << r.selected_epoch;
        if (r.metrics) {
            cell(r.metrics->uuas.value());
            cell(r.metrics->las.value());
            cell(r.metrics->type_accuracy.value());
            cell(r.metrics->direction_accuracy.value());
            cell(r.metrics->balanced_accuracy);
        } else {
            out << ",,,,,";
        }
        cell(r.auc);
        cell(r.metrics ? r.metrics->root.value() : std::nullopt);
        std::string err = r.error;
        for (char& c : err)
            if (c == ',' || c == '\n' || c == '"') c = ' ';
        out << ',' << err << '\n';
    }
}

/// One train+evaluate cycle per axis value. Failures are recorded per row.
inline std::vector<SweepRow> cmd_sweep(const ExperimentConfig& cfg, SweepAxis axis, const fs::path& dir,
                                       std::ostream* log = nullptr) {
    std::vector<int> values = axis == SweepAxis::layer ? cfg.layers : cfg.sweep_probe_dims;
    if (values.empty()) values = {cfg.train.probe_dim};
    const Bundle bundle = open_bundle(cfg);
    const LoadedData data = load_data(cfg, true, true);
    const std::string prefix = axis == SweepAxis::layer ? "layer_" : "probe_dim_";

    std::vector<SweepRow> rows(values.size());
    if (cfg.jobs <= 1) {
        for (std::size_t i = 0; i < values.size(); ++i) {
            rows[i] = sweep_cycle(cfg, axis, values[i], data, bundle, dir / (prefix + std::to_string(values[i])));
            if (log)
                *log << prefix << values[i] << ": "
                     << (rows[i].ok ? "LAS " + std::to_string(rows[i].metrics->las.value_or(0.0)) : rows[i].error)
                     << '\n';
        }
    } else {
        // cycles write to separate directories; bundle reads are serialized internally
        for (std::size_t start = 0; start < values.size(); start += static_cast<std::size_t>(cfg.jobs)) {
            std::vector<std::future<SweepRow>> running;
            const std::size_t stop = std::min(values.size(), start + static_cast<std::size_t>(cfg.jobs));
            for (std::size_t i = start; i < stop; ++i)
                running.push_back(std::async(std::launch::async, sweep_cycle, cfg, axis, values[i],
                                             std::cref(data), std::cref(bundle),
                                             dir / (prefix + std::to_string(values[i]))));
            for (std::size_t i = start; i < stop; ++i) rows[i] = running[i - start].get();
        }
    }
    {
        std::ofstream f(dir / "sweep.csv");
        write_sweep_csv(f, axis, rows);
    }
    if (cfg.report.svg) {
        std::vector<double> xs;
        std::vector<std::optional<double>> ys;
        for (const auto& r : rows) {
            xs.push_back(r.value);
            ys.push_back(r.metrics ? r.metrics->las.value() : std::nullopt);
        }
        std::ofstream f(dir / "sweep_las.svg");
        write_line_svg(f, xs, ys, axis == SweepAxis::layer ? "layer" : "k''", "LAS");
    }
    return rows;
}

// ---------------------------------------------------------------------------
// validate

struct Check {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Treebank/bundle diagnostics. Never throws for data problems; they become failed checks.
inline std::vector<Check> cmd_validate(const std::vector<fs::path>& treebanks, const fs::path& bundle_dir) {
    std::vector<Check> checks;
    std::optional<Bundle> bundle;
    try {
        bundle = read_bundle(bundle_dir);
        checks.push_back({"bundle", true,
                          bundle_dir.string() + ": " + std::to_string(bundle->manifest().sentences.size()) +
                              " sentences, " + std::to_string(bundle->manifest().layers.size()) + " layers"});
    } catch (const std::exception& e) {
        checks.push_back({"bundle", false, bundle_dir.string() + ": " + e.what()});
    }
    for (const auto& tb : treebanks) {
        std::vector<DepSentence> sentences;
        try {
            sentences = read_conllu_file(tb.string());
            for (const auto& s : sentences) validate_tree(s);
            checks.push_back({"treebank", true, tb.string() + ": " + std::to_string(sentences.size()) + " sentences"});
        } catch (const std::exception& e) {
            checks.push_back({"treebank", false, tb.string() + ": " + e.what()});
            continue;
        }
        if (!bundle) continue;
        std::size_t missing = 0, mismatched = 0;
        for (const auto& issue : cross_validate(*bundle, sentences)) {
            const bool is_missing = issue.problem == "missing from bundle";
            (is_missing ? missing : mismatched)++;
            checks.push_back({is_missing ? "coverage" : "alignment", false,
                              "sentence " + issue.sentence_id + ": " + issue.problem});
        }
        if (missing == 0) checks.push_back({"coverage", true, tb.string() + ": all sentence ids present"});
        if (mismatched == 0) checks.push_back({"alignment", true, tb.string() + ": word counts agree"});
    }
    return checks;
}

inline void print_checks(std::ostream& out, const std::vector<Check>& checks) {
    for (const auto& c : checks)
        out << std::left << std::setw(10) << c.name << ' ' << (c.passed ? "PASS" : "FAIL") << "  " << c.detail
            << '\n';
}

// ---------------------------------------------------------------------------
// synthetic data

/// Writes the planted dataset plus a ready-to-run experiment config under `dir`.
inline PlantedData cmd_synth(const PlantedSpec& spec, const fs::path& dir) {
    PlantedData data = generate_planted(spec);
    write_planted(data, dir);
    {
        std::ofstream f(dir / "spec.json");
        f << to_json(spec).dump(2) << '\n';
    }
    nlohmann::json exp = {
        {"data", {{"train", "train.conllu"}, {"validation", "dev.conllu"}, {"test", "test.conllu"}, {"bundle", "bundle"}}},
        {"output_dir", fs::absolute(dir / "runs").lexically_normal().string()},
        {"layer", 0},
        {"train", {{"kind", "polar"}, {"lambda", 10.0}, {"probe_dim", 64}}},
    };
    std::ofstream f(dir / "experiment.json");
    f << exp.dump(2) << '\n';
    return data;
}

inline std::vector<std::pair<ControlledLevel, std::vector<DepSentence>>> cmd_controlled(
    const ControlledSpec& spec, const fs::path& dir) {
    auto levels = generate_controlled(spec);
    fs::create_directories(dir);
    for (const auto& [level, sentences] : levels)
        write_conllu_file((dir / (std::string(to_string(level)) + ".conllu")).string(), sentences);
    return levels;
}

// ---------------------------------------------------------------------------

enum ExitCode { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitData = 3, kExitNumeric = 4 };

/// Maps library errors to process exit codes.
inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
    if (dynamic_cast<const NumericError*>(&e) || dynamic_cast<const DegenerateVectorError*>(&e))
        return kExitNumeric;
    if (dynamic_cast<const ParseError*>(&e) || dynamic_cast<const TreeError*>(&e) ||
        dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const DimensionError*>(&e) ||
        dynamic_cast<const AlignmentError*>(&e) || dynamic_cast<const IoError*>(&e))
        return kExitData;
    return kExitFailure;
}

}  // namespace polar
