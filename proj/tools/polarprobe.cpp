#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "polar_probe/experiment.hpp"

namespace fs = std::filesystem;
using namespace polar;

namespace {

struct ConfigArgs {
    std::string config;
    std::vector<std::string> overrides;
    std::string run_dir;

    void attach(CLI::App* app) {
        app->add_option("-c,--config", config, "experiment config (JSON)");
        app->add_option("--set", overrides, "override a config key, e.g. --set train.lambda=0");
        app->add_option("--run-dir", run_dir, "write into this directory instead of a timestamped one");
    }
    ExperimentConfig load() const { return load_config(config, overrides); }
};

void print_metrics(const EvalReport& rep) {
    const CoreMetrics& m = rep.metrics;
    auto show = [](const char* name, std::optional<double> v) {
        std::cout << "  " << std::left << std::setw(20) << name;
        if (v) std::cout << std::fixed << std::setprecision(4) << *v;
        else std::cout << "n/a";
        std::cout << '\n';
    };
    std::cout << "sentences " << m.sentences << '\n';
    show("uuas", m.uuas.value());
    show("las", m.las.value());
    show("root_identification", m.root.value());
    show("type_accuracy", m.type_accuracy.value());
    show("direction_accuracy", m.direction_accuracy.value());
    show("balanced_accuracy", m.balanced_accuracy);
    show("auc", rep.auc ? std::optional<double>(rep.auc->auc) : std::nullopt);
    std::cout.unsetf(std::ios::fixed);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"polarprobe: train and evaluate linear probes of dependency structure"};
    app.require_subcommand(1);

    // validate
    auto* validate = app.add_subcommand("validate", "cross-check treebank files against a bundle");
    std::vector<std::string> treebanks;
    std::string bundle_dir;
    ConfigArgs validate_cfg;
    validate->add_option("-t,--treebank", treebanks, "CoNLL-U file(s)");
    validate->add_option("-b,--bundle", bundle_dir, "bundle directory");
    validate->add_option("-c,--config", validate_cfg.config, "take paths from an experiment config");
    validate->add_option("--set", validate_cfg.overrides, "config override");

    // train
    auto* train_cmd = app.add_subcommand("train", "train a probe");
    ConfigArgs train_cfg;
    train_cfg.attach(train_cmd);
    bool verbose = false;
    train_cmd->add_flag("-v,--verbose", verbose, "print one line per epoch");

    // evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "decode the test split and write reports");
    ConfigArgs eval_cfg;
    eval_cfg.attach(eval_cmd);
    std::string probe_path;
    bool gold_injection = false;
    eval_cmd->add_option("-p,--probe", probe_path, "probe file")->required();
    eval_cmd->add_flag("--gold-injection", gold_injection, "score the gold trees (pipeline check)");

    // sweep
    auto* sweep_cmd = app.add_subcommand("sweep", "train+evaluate over layers or probe dimensions");
    ConfigArgs sweep_cfg;
    sweep_cfg.attach(sweep_cmd);
    std::string axis = "layer";
    std::vector<int> values;
    int jobs = 0;
    sweep_cmd->add_option("--axis", axis, "layer | probe_dim")->check(CLI::IsMember({"layer", "probe_dim"}));
    sweep_cmd->add_option("--values", values, "axis values (default: from the config)")->delimiter(',');
    sweep_cmd->add_option("-j,--jobs", jobs, "concurrent cycles");

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "generate a planted-code dataset");
    std::string synth_out, synth_spec;
    std::vector<std::string> synth_set;
    synth_cmd->add_option("-o,--out", synth_out, "output directory")->required();
    synth_cmd->add_option("--spec", synth_spec, "PlantedSpec JSON");
    synth_cmd->add_option("--set", synth_set, "spec override, e.g. --set noise_sigma=0");

    // controlled-gen
    auto* ctrl_cmd = app.add_subcommand("controlled-gen", "generate the controlled sentence sets");
    std::string ctrl_out, lexicon_path;
    int ctrl_count = 100;
    std::uint64_t ctrl_seed = 0;
    ctrl_cmd->add_option("-o,--out", ctrl_out, "output directory")->required();
    ctrl_cmd->add_option("--lexicon", lexicon_path, "lexicon JSON (nouns, verbs, prep_objects)");
    ctrl_cmd->add_option("--count", ctrl_count, "sentences per level");
    ctrl_cmd->add_option("--seed", ctrl_seed, "seed");

    // prototypes
    auto* proto_cmd = app.add_subcommand("prototypes", "build and save a prototype bank");
    ConfigArgs proto_cfg;
    proto_cfg.attach(proto_cmd);
    std::string proto_probe, proto_out;
    proto_cmd->add_option("-p,--probe", proto_probe, "probe file")->required();
    proto_cmd->add_option("-o,--out", proto_out, "output file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*validate) {
            fs::path bdir = bundle_dir;
            std::vector<fs::path> files(treebanks.begin(), treebanks.end());
            if (!validate_cfg.config.empty()) {
                const ExperimentConfig cfg = validate_cfg.load();
                if (bdir.empty()) bdir = cfg.data.bundle;
                if (files.empty())
                    for (const auto& p : {cfg.data.train, cfg.data.validation, cfg.data.test})
                        if (!p.empty()) files.push_back(p);
            }
            if (bdir.empty() || files.empty()) throw ConfigError("validate needs --bundle and --treebank (or --config)");
            const auto checks = cmd_validate(files, bdir);
            print_checks(std::cout, checks);
            const bool ok = std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
            return ok ? kExitOk : kExitData;
        }
        if (*train_cmd) {
            const ExperimentConfig cfg = train_cfg.load();
            const fs::path dir = make_run_dir(cfg, "train", train_cfg.run_dir);
            const TrainOutcome t = cmd_train(cfg, dir, verbose ? &std::cout : nullptr);
            std::cout << "run directory " << dir.string() << '\n'
                      << "probe " << t.probe_path.string() << " (selected epoch "
                      << t.result.probe.selected_epoch << ")\n";
            return kExitOk;
        }
        if (*eval_cmd) {
            ExperimentConfig cfg = eval_cfg.load();
            if (gold_injection) cfg.eval.gold_injection = true;
            const fs::path dir = make_run_dir(cfg, "evaluate", eval_cfg.run_dir);
            const EvalReport rep = cmd_evaluate(cfg, probe_path, dir);
            std::cout << "run directory " << dir.string() << '\n';
            print_metrics(rep);
            return kExitOk;
        }
        if (*sweep_cmd) {
            ExperimentConfig cfg = sweep_cfg.load();
            const SweepAxis ax = parse_sweep_axis(axis);
            if (!values.empty()) {
                if (ax == SweepAxis::layer) cfg.layers = values;
                else cfg.sweep_probe_dims = values;
            }
            if (jobs > 0) cfg.jobs = jobs;
            const fs::path dir = make_run_dir(cfg, "sweep", sweep_cfg.run_dir);
            const auto rows = cmd_sweep(cfg, ax, dir, &std::cout);
            std::cout << "run directory " << dir.string() << '\n';
            const bool all_ok = std::all_of(rows.begin(), rows.end(), [](const SweepRow& r) { return r.ok; });
            return all_ok ? kExitOk : kExitFailure;
        }
        if (*synth_cmd) {
            nlohmann::json j = nlohmann::json::object();
            if (!synth_spec.empty()) {
                std::ifstream in(synth_spec);
                if (!in) throw ConfigError("cannot read spec " + synth_spec);
                try {
                    in >> j;
                } catch (const nlohmann::json::exception& e) {
                    throw ConfigError("spec " + synth_spec + ": " + e.what());
                }
            }
            for (const auto& o : synth_set) detail::apply_override(j, o);
            PlantedSpec spec;
            try {
                spec = planted_spec_from_json(j);
            } catch (const nlohmann::json::exception& e) {
                throw ConfigError(std::string("planted spec: ") + e.what());
            }
            const PlantedData data = cmd_synth(spec, synth_out);
            std::cout << "wrote " << data.splits.train.size() << '/' << data.splits.validation.size() << '/'
                      << data.splits.test.size() << " sentences to " << synth_out << '\n';
            return kExitOk;
        }
        if (*ctrl_cmd) {
            ControlledSpec spec;
            if (!lexicon_path.empty()) {
                std::ifstream in(lexicon_path);
                if (!in) throw ConfigError("cannot read lexicon " + lexicon_path);
                try {
                    spec.lexicon = lexicon_from_json(nlohmann::json::parse(in));
                } catch (const nlohmann::json::exception& e) {
                    throw ConfigError("lexicon " + lexicon_path + ": " + e.what());
                }
            }
            spec.count = ctrl_count;
            spec.seed = ctrl_seed;
            const auto levels = cmd_controlled(spec, ctrl_out);
            for (const auto& [level, sentences] : levels)
                std::cout << to_string(level) << ": " << sentences.size() << " sentences\n";
            return kExitOk;
        }
        if (*proto_cmd) {
            const ExperimentConfig cfg = proto_cfg.load();
            const PrototypeBuild b = cmd_prototypes(cfg, proto_probe, proto_out);
            std::cout << "prototypes for " << b.bank.labels.size() << " labels written to " << proto_out << '\n';
            for (const auto& d : b.dropped) std::cout << "  dropped " << d << '\n';
            return kExitOk;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e);
    }
    return kExitOk;
}
