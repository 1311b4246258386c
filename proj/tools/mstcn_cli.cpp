// Command-line front end: train / eval / predict / gradcheck / synth.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data or format
// error, 3 numeric failure (gradient check failure, non-finite loss).

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <map>
#include <streambuf>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "mstcn/mstcn.hpp"

namespace fs = std::filesystem;
using namespace mstcn;

namespace {

// Flag name (no section) -> dotted config key. One CLI flag per config key.
const std::vector<std::pair<std::string, std::string>> kConfigFlags = {
    {"stages", "model.stages"},
    {"layers", "model.layers"},
    {"filters", "model.filters"},
    {"classes", "model.classes"},
    {"input_dim", "model.input_dim"},
    {"dropout", "model.dropout"},
    {"pass_features", "model.pass_features"},
    {"dilations", "model.dilations"},
    {"smoothing", "loss.smoothing"},
    {"lambda", "loss.lambda"},
    {"tau", "loss.tau"},
    {"lr", "optim.lr"},
    {"epochs", "optim.epochs"},
    {"seed", "optim.seed"},
    {"root", "data.root"},
    {"train_split", "data.train_split"},
    {"test_split", "data.test_split"},
    {"downsample", "data.downsample"},
    {"dir", "output.dir"},
    {"exclude", "eval.exclude"},
    {"thresholds", "eval.thresholds"},
};

struct ConfigArgs {
    std::string config_path;
    std::vector<std::pair<std::string, std::string>> overrides; // dotted key, value
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
    cmd->add_option("--config", args.config_path, "run configuration file (INI)");
    for (const auto& [flag, key] : kConfigFlags) {
        std::string dotted = key;
        cmd->add_option_function<std::string>(
            "--" + flag,
            [&args, dotted](const std::string& v) { args.overrides.emplace_back(dotted, v); },
            "override config key " + dotted);
    }
}

RunConfig resolve_config(const ConfigArgs& args) {
    RunConfig c;
    if (!args.config_path.empty()) c = load_run_config(args.config_path);
    for (const auto& [key, value] : args.overrides) set_config_key(c, key, value);
    return c;
}

// Mirrors every epoch line into the log file and onto stdout.
class TeeBuf : public std::streambuf {
  public:
    TeeBuf(std::streambuf* a, std::streambuf* b) : a_(a), b_(b) {}

  protected:
    int overflow(int ch) override {
        if (ch == traits_type::eof()) return 0;
        int ra = a_->sputc(static_cast<char>(ch));
        int rb = b_->sputc(static_cast<char>(ch));
        return (ra == traits_type::eof() || rb == traits_type::eof()) ? traits_type::eof() : ch;
    }
    int sync() override { return (a_->pubsync() == 0 && b_->pubsync() == 0) ? 0 : -1; }

  private:
    std::streambuf* a_;
    std::streambuf* b_;
};

std::vector<SequenceSample> load_and_prepare(const RunConfig& c, const std::string& split_path,
                                             const ClassMapping& mapping) {
    if (c.downsample < 1) throw ConfigError("data.downsample must be >= 1");
    std::vector<SequenceSample> samples = load_dataset(c.data_root, split_path, mapping);
    if (c.downsample > 1) {
        for (SequenceSample& s : samples) s = temporal_downsample(s, c.downsample);
    }
    for (std::size_t i = 1; i < samples.size(); ++i) {
        if (samples[i].features.rows() != samples[0].features.rows()) {
            throw DataError(samples[i].id + ": feature dimension " +
                            std::to_string(samples[i].features.rows()) + " differs from " +
                            samples[0].id + "'s " + std::to_string(samples[0].features.rows()));
        }
    }
    return samples;
}

std::set<int> resolve_excludes(const RunConfig& c, const ClassMapping& mapping) {
    std::set<int> out;
    for (const std::string& name : c.exclude_classes) out.insert(mapping.id_of(name));
    return out;
}

int cmd_train(const ConfigArgs& args) {
    RunConfig c = resolve_config(args);
    if (c.data_root.empty()) throw ConfigError("data.root is required (use --root)");
    if (c.output_dir.empty()) throw ConfigError("output.dir is required (use --dir)");

    ClassMapping mapping = load_mapping(c.data_root + "/mapping.txt");
    if (c.model.num_classes == 0) {
        c.model.num_classes = mapping.size();
    } else if (c.model.num_classes != mapping.size()) {
        throw DataError("config expects " + std::to_string(c.model.num_classes) +
                        " classes but the mapping lists " + std::to_string(mapping.size()));
    }
    std::vector<SequenceSample> samples = load_and_prepare(c, c.resolved_train_split(), mapping);
    int d_in = static_cast<int>(samples.at(0).features.rows());
    if (c.model.input_dim == 0) {
        c.model.input_dim = d_in;
    } else if (c.model.input_dim != d_in) {
        throw DataError("config expects input dimension " + std::to_string(c.model.input_dim) +
                        " but the features have " + std::to_string(d_in));
    }
    c.model.validate();

    fs::create_directories(c.output_dir);
    {
        std::ofstream res(c.output_dir + "/config.resolved", std::ios::trunc);
        if (!res) throw DataError("cannot write " + c.output_dir + "/config.resolved");
        res << serialize_run_config(c);
    }

    std::ofstream log_file(c.output_dir + "/train.log", std::ios::trunc);
    if (!log_file) throw DataError("cannot write " + c.output_dir + "/train.log");
    TeeBuf tee(log_file.rdbuf(), std::cout.rdbuf());
    std::ostream log(&tee);

    ModelParams model = init_model(c.model, c.seed);
    TrainSettings settings{c.loss, c.adam, c.epochs, c.seed};
    TrainResult result = train_model(std::move(model), samples, settings, &log);
    log.flush();

    save_checkpoint(c.output_dir + "/final.ckpt",
                    Checkpoint{result.model, true, result.adam});
    save_checkpoint(c.output_dir + "/best.ckpt", Checkpoint{result.best_model, false, {}});
    std::cout << "trained " << c.epochs << " epochs on " << samples.size() << " videos; best epoch "
              << result.best_epoch << " (mean loss " << result.best_loss << ")\n"
              << "wrote " << c.output_dir << "/{config.resolved,train.log,final.ckpt,best.ckpt}\n";
    return 0;
}

struct EvalArgs {
    ConfigArgs config;
    std::string checkpoint;
    std::string split;
    bool group_by_duration = false;
};

struct VideoEval {
    std::string id;
    std::size_t frames = 0;
    EvalReport report;
};

void write_report_files(const RunConfig& c, const std::vector<VideoEval>& videos,
                        const EvalReport& total, const std::vector<EvalReport>& groups) {
    if (c.output_dir.empty()) return;
    fs::create_directories(c.output_dir);
    std::ofstream txt(c.output_dir + "/report.txt", std::ios::trunc);
    std::ofstream kv(c.output_dir + "/report.kv", std::ios::trunc);
    if (!txt || !kv) throw DataError("cannot write reports under " + c.output_dir);
    txt << "== aggregate ==\n" << report_to_text(total) << "\n";
    for (std::size_t g = 0; g < groups.size(); ++g) {
        txt << "== duration group " << (g + 1) << " of " << groups.size() << " ==\n"
            << report_to_text(groups[g]) << "\n";
    }
    for (const VideoEval& v : videos) {
        txt << "== video " << v.id << " ==\n" << report_to_text(v.report) << "\n";
    }
    kv << report_to_kv(total);
    for (std::size_t g = 0; g < groups.size(); ++g) {
        std::istringstream lines(report_to_kv(groups[g]));
        std::string line;
        while (std::getline(lines, line)) kv << "group" << (g + 1) << "." << line << "\n";
    }
}

int cmd_eval(const EvalArgs& args) {
    RunConfig c = resolve_config(args.config);
    if (c.data_root.empty()) throw ConfigError("data.root is required (use --root)");
    if (args.checkpoint.empty()) throw ConfigError("--checkpoint is required");

    ClassMapping mapping = load_mapping(c.data_root + "/mapping.txt");
    Checkpoint ckpt = load_checkpoint(args.checkpoint);
    if (ckpt.model.config.num_classes != mapping.size()) {
        throw FormatError(FormatError::Kind::config_mismatch,
                          "checkpoint was trained for " +
                              std::to_string(ckpt.model.config.num_classes) +
                              " classes but the mapping lists " + std::to_string(mapping.size()));
    }
    std::string split = args.split.empty() ? c.resolved_test_split() : args.split;
    std::vector<SequenceSample> samples = load_and_prepare(c, split, mapping);

    EvalOptions opts;
    opts.thresholds = c.thresholds;
    opts.exclude_classes = resolve_excludes(c, mapping);

    for (const SequenceSample& s : samples) {
        if (static_cast<int>(s.features.rows()) != ckpt.model.config.input_dim) {
            throw DataError(s.id + ": feature dimension " + std::to_string(s.features.rows()) +
                            " does not match the checkpoint's " +
                            std::to_string(ckpt.model.config.input_dim));
        }
    }
    // Videos are independent given the (read-only) model, so score them in
    // parallel. Results land by split index, which keeps every output byte
    // identical regardless of worker count or completion order.
    std::vector<VideoEval> videos(samples.size());
    std::size_t workers = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    workers = std::min(workers, samples.size());
    std::vector<std::future<void>> tasks;
    for (std::size_t w = 0; w < workers; ++w) {
        tasks.push_back(std::async(std::launch::async, [&, w] {
            for (std::size_t i = w; i < samples.size(); i += workers) {
                const SequenceSample& s = samples[i];
                std::vector<int> pred = predict_labels(ckpt.model, s.features);
                videos[i] = {s.id, s.labels.size(), evaluate_video(s.labels, pred, opts)};
            }
        }));
    }
    for (std::future<void>& t : tasks) t.get();
    std::vector<EvalReport> reports;
    for (const VideoEval& v : videos) reports.push_back(v.report);
    EvalReport total = aggregate_reports(reports);

    std::vector<EvalReport> groups;
    if (args.group_by_duration) {
        std::vector<VideoEval> sorted = videos;
        std::stable_sort(sorted.begin(), sorted.end(),
                         [](const VideoEval& a, const VideoEval& b) { return a.frames < b.frames; });
        std::size_t n = sorted.size();
        for (std::size_t g = 0; g < 3 && g < n; ++g) {
            std::size_t begin = g * n / 3, end = (g + 1) * n / 3;
            if (g == 2) end = n;
            if (begin >= end) continue;
            std::vector<EvalReport> part;
            for (std::size_t i = begin; i < end; ++i) part.push_back(sorted[i].report);
            groups.push_back(aggregate_reports(part));
        }
    }

    write_report_files(c, videos, total, groups);
    std::cout << report_to_text(total);
    for (std::size_t g = 0; g < groups.size(); ++g) {
        std::cout << "-- duration group " << (g + 1) << " --\n" << report_to_text(groups[g]);
    }
    if (!c.output_dir.empty()) {
        std::cout << "wrote " << c.output_dir << "/{report.txt,report.kv}\n";
    }
    return 0;
}

struct PredictArgs {
    std::string checkpoint;
    std::string features;
    std::string mapping;
    std::string out;
    int stage = 0; // 0 = final stage, 1-based otherwise
};

int cmd_predict(const PredictArgs& args) {
    Checkpoint ckpt = load_checkpoint(args.checkpoint);
    ClassMapping mapping = load_mapping(args.mapping);
    if (mapping.size() != ckpt.model.config.num_classes) {
        throw FormatError(FormatError::Kind::config_mismatch,
                          "checkpoint expects " + std::to_string(ckpt.model.config.num_classes) +
                              " classes but the mapping lists " + std::to_string(mapping.size()));
    }
    Tensor features = load_feature_file(args.features);
    if (static_cast<int>(features.rows()) != ckpt.model.config.input_dim) {
        throw DataError("feature dimension " + std::to_string(features.rows()) +
                        " does not match the checkpoint's " +
                        std::to_string(ckpt.model.config.input_dim));
    }
    int stages = ckpt.model.config.num_stages;
    if (args.stage < 0 || args.stage > stages) {
        throw ConfigError("--stage must be between 1 and " + std::to_string(stages));
    }
    std::size_t stage_index =
        args.stage == 0 ? static_cast<std::size_t>(stages - 1) : static_cast<std::size_t>(args.stage - 1);
    std::vector<int> labels = predict_labels(ckpt.model, features, stage_index);
    write_labels(args.out, labels, mapping);
    std::cout << "wrote " << labels.size() << " labels to " << args.out << "\n";
    return 0;
}

struct GradcheckArgs {
    int stages = 2, layers = 3, filters = 8, classes = 4, input_dim = 8;
    int frames = 16;
    double dropout = 0.5, lambda = 0.15, tau = 4.0;
    double eps = 1e-5, tol = 1e-4;
    std::uint64_t seed = 7;
    std::string smoothing; // empty = sweep both kinds
};

int cmd_gradcheck(const GradcheckArgs& args) {
    ModelConfig mc;
    mc.num_stages = args.stages;
    mc.num_layers = args.layers;
    mc.num_filters = args.filters;
    mc.num_classes = args.classes;
    mc.input_dim = args.input_dim;
    mc.dropout = args.dropout;

    std::vector<Smoothing> kinds;
    if (args.smoothing.empty()) {
        kinds = {Smoothing::t_mse, Smoothing::kl};
    } else {
        kinds = {smoothing_from_string(args.smoothing)};
    }
    std::vector<double> lambdas;
    if (args.lambda != 0.0) lambdas.push_back(0.0);
    lambdas.push_back(args.lambda);

    bool all_pass = true;
    for (Smoothing kind : kinds) {
        for (double lambda : lambdas) {
            LossConfig lc;
            lc.smoothing = kind;
            lc.lambda = lambda;
            lc.tau = args.tau;
            GradcheckReport report =
                run_gradcheck(mc, lc, static_cast<std::size_t>(args.frames), args.seed, args.eps,
                              args.tol);
            std::cout << "-- smoothing " << to_string(kind) << ", lambda " << lambda << " --\n"
                      << gradcheck_report_text(report);
            all_pass = all_pass && report.pass;
        }
    }
    std::cout << (all_pass ? "gradcheck PASS\n" : "gradcheck FAIL\n");
    return all_pass ? 0 : 3;
}

struct SynthArgs {
    std::string config_path;
    std::string out;
    int classes = 8, feature_dim = 16, videos = 80, train_videos = -1;
    double mean_length = 600.0, duration_mean = 60.0, duration_std = 15.0;
    double noise_std = 1.0, mean_scale = 1.0, burst_rate = 0.0, burst_length = 4.0;
    double video_drift = 0.0;
    std::uint64_t seed = 1;
    std::set<std::string> from_cli; // keys set by explicit flags, which win over the file
};

void apply_synth_key(SynthArgs& a, const std::string& key, const std::string& value) {
    using namespace mstcn::detail;
    std::string k = key.rfind("synth.", 0) == 0 ? key.substr(6) : key;
    if (a.from_cli.count(k)) return;
    if (k == "classes") a.classes = parse_int(key, value);
    else if (k == "feature_dim") a.feature_dim = parse_int(key, value);
    else if (k == "videos") a.videos = parse_int(key, value);
    else if (k == "train_videos") a.train_videos = parse_int(key, value);
    else if (k == "mean_length") a.mean_length = parse_double(key, value);
    else if (k == "duration_mean") a.duration_mean = parse_double(key, value);
    else if (k == "duration_std") a.duration_std = parse_double(key, value);
    else if (k == "noise_std") a.noise_std = parse_double(key, value);
    else if (k == "mean_scale") a.mean_scale = parse_double(key, value);
    else if (k == "burst_rate") a.burst_rate = parse_double(key, value);
    else if (k == "burst_length") a.burst_length = parse_double(key, value);
    else if (k == "video_drift") a.video_drift = parse_double(key, value);
    else if (k == "seed") a.seed = parse_u64(key, value);
    else throw ConfigError("unknown synthesizer key '" + key + "'");
}

int cmd_synth(SynthArgs& args) {
    if (!args.config_path.empty()) {
        std::ifstream in(args.config_path);
        if (!in) throw ConfigError("cannot open config file " + args.config_path);
        scan_ini(in, [&](const std::string& key, const std::string& value, std::size_t lineno) {
            try {
                apply_synth_key(args, key, value);
            } catch (const ConfigError& e) {
                throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
            }
        });
    }
    if (args.out.empty()) throw ConfigError("--out is required");

    SynthConfig sc;
    sc.num_classes = args.classes;
    sc.feature_dim = args.feature_dim;
    sc.num_videos = args.videos;
    sc.mean_video_length = args.mean_length;
    sc.transitions = uniform_transitions(args.classes);
    sc.duration_mean.assign(static_cast<std::size_t>(args.classes), args.duration_mean);
    sc.duration_std.assign(static_cast<std::size_t>(args.classes), args.duration_std);
    sc.class_means = random_class_means(args.classes, args.feature_dim, args.mean_scale, args.seed);
    sc.noise_std = args.noise_std;
    sc.burst_rate = args.burst_rate;
    sc.burst_mean_length = args.burst_length;
    sc.video_drift_std = args.video_drift;
    sc.seed = args.seed;

    int train_count = args.train_videos >= 0 ? args.train_videos : (args.videos * 3) / 4;
    SynthDataset ds = generate_synthetic(sc);
    write_dataset(args.out, ds, train_count);

    std::ofstream res(args.out + "/synth.resolved", std::ios::trunc);
    if (!res) throw DataError("cannot write " + args.out + "/synth.resolved");
    res << "[synth]\n"
        << "classes = " << args.classes << "\n"
        << "feature_dim = " << args.feature_dim << "\n"
        << "videos = " << args.videos << "\n"
        << "train_videos = " << train_count << "\n"
        << "mean_length = " << args.mean_length << "\n"
        << "duration_mean = " << args.duration_mean << "\n"
        << "duration_std = " << args.duration_std << "\n"
        << "noise_std = " << args.noise_std << "\n"
        << "mean_scale = " << args.mean_scale << "\n"
        << "burst_rate = " << args.burst_rate << "\n"
        << "burst_length = " << args.burst_length << "\n"
        << "video_drift = " << args.video_drift << "\n"
        << "seed = " << args.seed << "\n";

    std::size_t frames = 0;
    for (const SequenceSample& s : ds.samples) frames += s.labels.size();
    std::cout << "wrote " << ds.samples.size() << " videos (" << frames << " frames, "
              << train_count << " train) to " << args.out << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"temporal action segmentation: multi-stage TCN toolkit"};
    app.require_subcommand(1);

    ConfigArgs train_args;
    CLI::App* train = app.add_subcommand("train", "train a model on a dataset");
    add_config_options(train, train_args);

    EvalArgs eval_args;
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    add_config_options(eval, eval_args.config);
    eval->add_option("--checkpoint", eval_args.checkpoint, "checkpoint file to evaluate");
    eval->add_option("--split", eval_args.split, "split file (default: <root>/test.split)");
    eval->add_flag("--group-by-duration", eval_args.group_by_duration,
                   "additionally report three duration-sorted video groups");

    PredictArgs predict_args;
    CLI::App* predict = app.add_subcommand("predict", "write frame labels for one feature file");
    predict->add_option("--checkpoint", predict_args.checkpoint, "checkpoint file")->required();
    predict->add_option("--features", predict_args.features, "input .fmat feature file")->required();
    predict->add_option("--mapping", predict_args.mapping, "class mapping file")->required();
    predict->add_option("--out", predict_args.out, "output label file")->required();
    predict->add_option("--stage", predict_args.stage,
                        "emit predictions of this stage (1-based; default: final stage)");

    GradcheckArgs gc_args;
    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    gradcheck->add_option("--stages", gc_args.stages, "stage count (default 2)");
    gradcheck->add_option("--layers", gc_args.layers, "layers per stage (default 3)");
    gradcheck->add_option("--filters", gc_args.filters, "filter count (default 8)");
    gradcheck->add_option("--classes", gc_args.classes, "class count (default 4)");
    gradcheck->add_option("--input_dim", gc_args.input_dim, "feature dimension (default 8)");
    gradcheck->add_option("--frames", gc_args.frames, "sequence length (default 16)");
    gradcheck->add_option("--dropout", gc_args.dropout, "dropout rate (default 0.5)");
    gradcheck->add_option("--lambda", gc_args.lambda, "smoothing weight (default 0.15)");
    gradcheck->add_option("--tau", gc_args.tau, "smoothing truncation (default 4)");
    gradcheck->add_option("--eps", gc_args.eps, "finite-difference step (default 1e-5)");
    gradcheck->add_option("--tol", gc_args.tol, "relative-error tolerance (default 1e-4)");
    gradcheck->add_option("--seed", gc_args.seed, "seed (default 7)");
    gradcheck->add_option("--smoothing", gc_args.smoothing,
                          "check one smoothing kind only (default: both)");

    SynthArgs synth_args;
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--config", synth_args.config_path, "synthesizer configuration file (INI)");
    synth->add_option("--out", synth_args.out, "output dataset directory");
    auto synth_opt = [&](const std::string& name, auto& field) {
        synth->add_option_function<std::decay_t<decltype(field)>>(
            "--" + name,
            [&synth_args, &field, name](const std::decay_t<decltype(field)>& v) {
                field = v;
                synth_args.from_cli.insert(name);
            },
            "synthesizer key " + name);
    };
    synth_opt("classes", synth_args.classes);
    synth_opt("feature_dim", synth_args.feature_dim);
    synth_opt("videos", synth_args.videos);
    synth_opt("train_videos", synth_args.train_videos);
    synth_opt("mean_length", synth_args.mean_length);
    synth_opt("duration_mean", synth_args.duration_mean);
    synth_opt("duration_std", synth_args.duration_std);
    synth_opt("noise_std", synth_args.noise_std);
    synth_opt("mean_scale", synth_args.mean_scale);
    synth_opt("burst_rate", synth_args.burst_rate);
    synth_opt("burst_length", synth_args.burst_length);
    synth_opt("video_drift", synth_args.video_drift);
    synth_opt("seed", synth_args.seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 1;
    }

    try {
        if (train->parsed()) return cmd_train(train_args);
        if (eval->parsed()) return cmd_eval(eval_args);
        if (predict->parsed()) return cmd_predict(predict_args);
        if (gradcheck->parsed()) return cmd_gradcheck(gc_args);
        if (synth->parsed()) return cmd_synth(synth_args);
        std::cerr << "no subcommand given\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
