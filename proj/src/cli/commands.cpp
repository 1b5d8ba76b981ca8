#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "texgraph/cli.hpp"
#include "texgraph/errors.hpp"
#include "texgraph/text.hpp"

namespace fs = std::filesystem;

namespace texgraph::cli {

namespace {

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << content;
    if (!f) throw Error(path.string() + ": write failed");
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(dir.string() + ": cannot create directory: " + ec.message());
}

std::optional<texdata::Split> parse_split_arg(const std::string& s) {
    if (s == "all") return std::nullopt;
    return texdata::parse_split(s);
}

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    std::string out;
    bool force = false;
    std::vector<std::string> sets;

    // gen-data
    std::string classes;
    std::optional<std::size_t> per_class;
    std::optional<std::size_t> size;
    std::string split_fractions;

    // train / eval / inspect
    std::string data;
    std::string ablate;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> batch_size;
    std::optional<double> lr;
    bool resume = false;
    bool lenient = false;
    std::string checkpoint;
    std::string split = "test";
    std::string image;

    // gradcheck
    std::string op;
};

/// defaults < config file < --set < dedicated flags
RunConfig build_config(const Options& o) {
    RunConfig rc;
    if (!o.config.empty()) rc.apply_file(o.config);
    for (const auto& kv : o.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
        rc.set(text::trim(std::string_view(kv).substr(0, eq)), text::trim(std::string_view(kv).substr(eq + 1)));
    }
    if (o.seed) rc.set("seed", std::to_string(*o.seed));
    if (o.threads) rc.train.threads = *o.threads;
    if (!o.classes.empty()) rc.set("data.classes", o.classes);
    if (o.per_class) rc.data.per_class = *o.per_class;
    if (o.size) rc.data.size = *o.size;
    if (!o.split_fractions.empty()) rc.set("data.split", o.split_fractions);
    if (!o.ablate.empty()) model::apply_ablation(rc.model, model::parse_ablation(o.ablate));
    if (o.epochs) rc.train.epochs = *o.epochs;
    if (o.batch_size) rc.train.batch_size = *o.batch_size;
    if (o.lr) rc.train.lr = *o.lr;
    rc.train.validate();
    return rc;
}

texdata::Dataset load_dataset(const std::string& root, std::size_t image_size, bool lenient, std::ostream& err) {
    texdata::LoadOptions lo;
    lo.image_size = image_size;
    lo.strict = !lenient;
    auto res = texdata::load_dir(root, lo);
    for (const auto& e : res.errors) err << "warning: skipped " << e << "\n";
    return std::move(res.dataset);
}

int cmd_gen_data(const Options& o, std::ostream& out) {
    if (o.out.empty()) throw CLI::RequiredError("--out");
    const RunConfig rc = build_config(o);
    const fs::path root = o.out;
    if (fs::exists(root) && !fs::is_empty(root) && !o.force) {
        throw ConfigError(root.string() + " exists and is not empty (use --force to overwrite)");
    }
    auto ds = texdata::generate(rc.data);
    texdata::split(ds, rc.split, rc.data.seed);
    if (o.force && fs::exists(root)) fs::remove_all(root);
    texdata::write_dir(ds, root, rc.data.to_text() + "split=" +
                                     text::join_doubles({rc.split[0], rc.split[1], rc.split[2]}) + "\n");
    out << "wrote " << ds.items.size() << " images to " << root.string() << "\n";
    const auto counts = ds.class_counts();
    for (std::size_t c = 0; c < ds.classes(); ++c) out << "  " << ds.class_names[c] << ": " << counts[c] << "\n";
    out << "  train " << ds.count(texdata::Split::train) << ", val " << ds.count(texdata::Split::val) << ", test "
        << ds.count(texdata::Split::test) << "\n";
    return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
    RunConfig rc = build_config(o);
    const fs::path dir = o.out.empty() ? fs::path("run") : fs::path(o.out);
    const fs::path ckpt = dir / "checkpoint.bin";

    std::optional<trainer::CheckpointData> resumed;
    if (o.resume) {
        resumed = trainer::read_checkpoint(ckpt);
        rc.model = resumed->config;
    }
    const texdata::Dataset ds = load_dataset(o.data, rc.model.input_size, o.lenient, err);
    if (resumed && ds.classes() != rc.model.classes) {
        throw CheckpointError(CheckpointError::Kind::config_mismatch,
                              ckpt.string() + ": model has " + std::to_string(rc.model.classes) +
                                  " classes, dataset has " + std::to_string(ds.classes()));
    }
    rc.model.classes = ds.classes();
    rc.model.validate();

    auto params = model::init_model(rc.model, rc.train.seed);
    auto state = trainer::init_train_state(rc.train);
    if (resumed) trainer::restore(*resumed, params, &state);

    const auto train_set = ds.subset(texdata::Split::train);
    const auto val_set = ds.subset(texdata::Split::val);
    const auto test_set = ds.subset(texdata::Split::test);
    out << "training on " << train_set.size() << " images (" << val_set.size() << " val, " << test_set.size()
        << " test), " << ds.classes() << " classes, modules:" << (rc.model.enable_cag ? " cag" : "")
        << (rc.model.enable_mag ? " mag" : "") << (rc.model.enable_pe ? " pe" : "")
        << (rc.model.enable_cag || rc.model.enable_mag || rc.model.enable_pe ? "" : " none") << "\n";

    ensure_dir(dir);
    std::vector<trainer::EpochRecord> history;
    if (resumed) {
        // Keep earlier rows when continuing a run.
        std::ifstream prev(dir / "history.csv");
        std::string line;
        std::getline(prev, line);
        while (std::getline(prev, line)) {
            const auto f = text::split(line, ',');
            if (f.size() != 6) continue;
            trainer::EpochRecord r;
            r.epoch = text::parse_size(f[0], "history epoch");
            r.train_loss = text::parse_double(f[1], "history");
            r.train_acc = text::parse_double(f[2], "history");
            if (!f[3].empty()) r.val_loss = text::parse_double(f[3], "history");
            if (!f[4].empty()) r.val_acc = text::parse_double(f[4], "history");
            r.lr = text::parse_double(f[5], "history");
            if (r.epoch <= state.epoch) history.push_back(r);
        }
    }
    const auto on_epoch = [&](const trainer::EpochRecord& r) {
        out << "epoch " << r.epoch << "/" << rc.train.epochs << "  loss " << text::format_double(r.train_loss)
            << "  acc " << text::format_double(r.train_acc);
        if (!std::isnan(r.val_acc)) out << "  val_acc " << text::format_double(r.val_acc);
        out << "  lr " << text::format_double(r.lr) << "\n";
        out.flush();
    };
    for (auto& r : trainer::train(rc.model, params, rc.train, state, train_set, val_set, on_epoch)) history.push_back(r);

    trainer::save_checkpoint(ckpt, rc.model, params, state);
    write_file(dir / "history.csv", trainer::history_csv(history));
    write_file(dir / "config.txt", rc.to_text());
    if (!test_set.empty()) {
        const auto ev = trainer::evaluate(rc.model, params, test_set, rc.train.threads);
        out << "test accuracy " << text::format_double(ev.accuracy) << " (" << test_set.size() << " images)\n";
    }
    out << "wrote " << ckpt.string() << " and " << (dir / "history.csv").string() << "\n";
    return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out, std::ostream& err) {
    const RunConfig rc = build_config(o);
    auto loaded = trainer::load_model(o.checkpoint);
    const texdata::Dataset ds = load_dataset(o.data, loaded.config.input_size, o.lenient, err);
    if (ds.classes() != loaded.config.classes) {
        throw CheckpointError(CheckpointError::Kind::config_mismatch,
                              o.checkpoint + ": model has " + std::to_string(loaded.config.classes) +
                                  " classes, dataset " + o.data + " has " + std::to_string(ds.classes()));
    }
    const auto which = parse_split_arg(o.split);
    const auto items = which ? ds.subset(*which) : ds.items;
    if (items.empty()) throw ContractError("eval: split '" + o.split + "' of " + o.data + " is empty");
    const auto ev = trainer::evaluate(loaded.config, loaded.params, items, rc.train.threads);
    out << "split " << o.split << ": " << items.size() << " images, accuracy " << text::format_double(ev.accuracy)
        << ", mean loss " << text::format_double(ev.mean_loss) << "\n";
    const std::string csv = trainer::confusion_csv(ev, ds.class_names);
    if (o.out.empty()) {
        out << csv;
    } else {
        ensure_dir(o.out);
        write_file(fs::path(o.out) / "confusion.csv", csv);
        write_file(fs::path(o.out) / "metrics.csv", "split,count,accuracy,mean_loss\n" + o.split + "," +
                                                        std::to_string(items.size()) + "," +
                                                        text::format_double(ev.accuracy) + "," +
                                                        text::format_double(ev.mean_loss) + "\n");
        out << "wrote " << (fs::path(o.out) / "confusion.csv").string() << "\n";
    }
    return kExitOk;
}

int cmd_inspect(const Options& o, std::ostream& out) {
    if (o.out.empty()) throw CLI::RequiredError("--out");
    auto loaded = trainer::load_model(o.checkpoint);
    const Tensor raw = texdata::read_ppm(o.image);
    const MapShape m = map_shape(raw);
    const Tensor image = texdata::center_crop_resize(raw, std::min(m.h, m.w), loaded.config.input_size);
    model::ForwardTrace trace;
    const Tensor logits = model::logits(image, loaded.config, loaded.params, &trace);

    const fs::path dir = o.out;
    ensure_dir(dir);
    std::vector<std::string> written;
    const auto emit = [&](const std::string& name, const std::string& content) {
        write_file(dir / name, content);
        written.push_back(name);
    };
    const auto matrix_csv = [](const Tensor& t, const std::string& row_name, const std::string& col_prefix) {
        std::string s = row_name;
        const std::size_t rows = t.extent(0);
        const std::size_t cols = t.extent(1);
        for (std::size_t j = 0; j < cols; ++j) s += "," + col_prefix + std::to_string(j);
        s += "\n";
        for (std::size_t i = 0; i < rows; ++i) {
            s += std::to_string(i);
            for (std::size_t j = 0; j < cols; ++j) s += "," + text::format_double(t[i * cols + j]);
            s += "\n";
        }
        return s;
    };

    if (!trace.attention.empty()) emit("attention.csv", matrix_csv(trace.attention, "node", "n"));
    if (!trace.adjacency.targets.empty()) {
        std::string s = "source,rank,target\n";
        const auto& adj = trace.adjacency;
        for (std::size_t p = 0; p < adj.source.pixels(); ++p) {
            const auto nb = adj.neighbors(p);
            for (std::size_t r = 0; r < nb.size(); ++r) {
                s += std::to_string(p) + "," + std::to_string(r) + "," + std::to_string(nb[r]) + "\n";
            }
        }
        emit("adjacency.csv", s);
    }
    if (!trace.assignments.empty()) emit("assignments.csv", matrix_csv(trace.assignments, "pixel", "k"));
    std::string z = "index,value\n";
    for (std::size_t i = 0; i < trace.z.size(); ++i) z += std::to_string(i) + "," + text::format_double(trace.z[i]) + "\n";
    emit("z.csv", z);
    std::string lg = "class,logit\n";
    for (std::size_t i = 0; i < logits.size(); ++i) lg += std::to_string(i) + "," + text::format_double(logits[i]) + "\n";
    emit("logits.csv", lg);

    for (const auto& w : written) out << "wrote " << (dir / w).string() << "\n";
    return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Graph-enhanced texture encoding: data generation, training and verification", "texgraph"};
    app.require_subcommand(1);
    app.fallthrough();
    Options o;

    app.add_option("--config", o.config, "key=value config file")->check(CLI::ExistingFile);
    app.add_option("--seed", o.seed, "random seed (data generation, init and shuffling)");
    app.add_option("--threads", o.threads, "worker threads for training and evaluation (default 1)");
    app.add_option("--out", o.out, "output path");
    app.add_flag("--force", o.force, "overwrite an existing non-empty output directory");
    app.add_option("--set", o.sets, "override a config key: --set KEY=VALUE (repeatable)");

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic texture dataset");
    gen->add_option("--classes", o.classes, "comma-separated texture classes");
    gen->add_option("--per-class", o.per_class, "images per class");
    gen->add_option("--size", o.size, "image side in pixels");
    gen->add_option("--split", o.split_fractions, "train,val,test fractions");

    auto* train = app.add_subcommand("train", "train a model and write checkpoint + history.csv into --out (default run/)");
    train->add_option("--data", o.data, "dataset directory")->required();
    train->add_option("--ablate", o.ablate, "module set: fe, cag, mag or full")
        ->check(CLI::IsMember({"fe", "cag", "mag", "full"}));
    train->add_option("--epochs", o.epochs, "number of epochs");
    train->add_option("--batch-size", o.batch_size, "mini-batch size");
    train->add_option("--lr", o.lr, "initial learning rate");
    train->add_flag("--resume", o.resume, "continue from <out>/checkpoint.bin");
    train->add_flag("--lenient", o.lenient, "skip unreadable images instead of failing");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint; writes confusion.csv into --out or prints it");
    eval->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
    eval->add_option("--data", o.data, "dataset directory")->required();
    eval->add_option("--split", o.split, "train, val, test or all")
        ->check(CLI::IsMember({"train", "val", "test", "all"}));
    eval->add_flag("--lenient", o.lenient, "skip unreadable images instead of failing");

    auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every op and the full model");
    grad->add_option("--op", o.op, "check a single op");
    bool list = false;
    grad->add_flag("--list", list, "list op names");

    auto* inspect = app.add_subcommand("inspect", "dump attention, adjacency, assignments and Z for one image");
    inspect->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
    inspect->add_option("--image", o.image, "PPM image")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n" << "run 'texgraph --help' for usage\n";
        return kExitUsage;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(o, out);
        if (train->parsed()) return cmd_train(o, out, err);
        if (eval->parsed()) return cmd_eval(o, out, err);
        if (inspect->parsed()) return cmd_inspect(o, out);
        if (grad->parsed()) {
            build_config(o);
            const auto cases = gradcheck_cases();
            if (list) {
                for (const auto& c : cases) out << c.name << "\n";
                return kExitOk;
            }
            return run_gradcheck(cases, o.op, out, err);
        }
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << " is required\n";
        return kExitUsage;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}

}  // namespace texgraph::cli
