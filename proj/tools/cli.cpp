#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "fabseg/checkpoint.hpp"
#include "fabseg/data_pipeline.hpp"
#include "fabseg/errors.hpp"
#include "fabseg/image_io.hpp"
#include "fabseg/inference.hpp"
#include "fabseg/metrics.hpp"
#include "fabseg/postprocess.hpp"
#include "fabseg/trainer.hpp"
#include "fabseg/verification.hpp"

namespace fabseg::cli {
namespace fs = std::filesystem;

const std::string& Command::get(const std::string& key) const {
    auto it = options.find(key);
    if (it == options.end()) fail(ErrorKind::UsageError, name + ": missing required option --" + key);
    return it->second;
}

std::string Command::get_or(const std::string& key, const std::string& fallback) const {
    auto it = options.find(key);
    return it == options.end() ? fallback : it->second;
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, value);
    require(ec == std::errc{} && ptr == end, ErrorKind::UsageError, "--" + key + ": not a number: " + text);
    return value;
}

double parse_real(const std::string& key, const std::string& text) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(text, &pos);
        if (pos == text.size()) return v;
    } catch (const std::exception&) {
    }
    fail(ErrorKind::UsageError, "--" + key + ": not a number: " + text);
}

const std::map<std::string, std::string>& command_descriptions() {
    static const std::map<std::string, std::string> d = {
        {"synth", "generate synthetic scenes with region and boundary labels"},
        {"prepare", "stretch, tile and split raw imagery"},
        {"train-prompter", "train the Prompter network"},
        {"finetune", "fine-tune one SAM-block decoder head"},
        {"predict", "predict region, boundary, fused masks and parcels"},
        {"evaluate", "score predicted masks against ground truth"},
        {"ablate", "run the FTD/FTPE/MP/PP ablation table"},
        {"verify", "run the numerical oracle suite"},
    };
    return d;
}

struct OptionSpec {
    const char* name;
    const char* help;
    bool is_switch = false;
};

const std::vector<std::pair<std::string, std::vector<OptionSpec>>>& command_table() {
    static const std::vector<OptionSpec> ablation_switches = {
        {"no-ftd", "keep the decoder frozen", true},
        {"no-ftpe", "keep the prompt encoder frozen", true},
        {"no-mp", "do not feed the mask prompt", true},
        {"no-pp", "do not feed point prompts", true},
    };
    static const std::vector<OptionSpec> prompt_opts = {
        {"n-fg", "foreground points per tile"},
        {"n-bg", "background points per tile"},
        {"t-fg", "foreground probability threshold"},
        {"t-bg", "background probability threshold"},
    };
    auto with = [](std::vector<OptionSpec> base, const std::vector<OptionSpec>& extra) {
        base.insert(base.end(), extra.begin(), extra.end());
        return base;
    };
    static const std::vector<std::pair<std::string, std::vector<OptionSpec>>> table = {
        {"synth",
         {{"n", "number of scenes (default 8)"},
          {"seed", "base seed (default 1)"},
          {"size", "scene side in pixels (default 64)"},
          {"parcels", "parcels per scene (default 4)"},
          {"out", "output directory"}}},
        {"prepare",
         {{"manifest", "raw tile manifest (image, region, boundary)"},
          {"lo", "stretch lower bound (default 0)"},
          {"hi", "stretch upper bound (default 3000)"},
          {"tile", "tile size (default 256)"},
          {"split", "train,val,test ratios (default 0.7,0.15,0.15)"},
          {"seed", "split seed"},
          {"out", "output directory"},
          {"config", "configuration file"}}},
        {"train-prompter",
         with({{"config", "configuration file"},
               {"out", "output checkpoint"},
               {"data", "training manifest (overrides [data] manifest)"},
               {"init", "checkpoint to resume from"},
               {"iterations", "iteration count override"},
               {"log", "per-step CSV log"}},
              {})},
        {"finetune",
         with(with({{"config", "configuration file"},
                    {"head", "region | boundary"},
                    {"prompter-ckpt", "trained Prompter checkpoint"},
                    {"sam-ckpt", "starting SAM-block checkpoint (default: fresh init)"},
                    {"out", "output checkpoint"},
                    {"data", "training manifest (overrides [data] manifest)"},
                    {"epochs", "epoch count override"},
                    {"log", "per-step CSV log"}},
                   ablation_switches),
              prompt_opts)},
        {"predict",
         with(with({{"prompter-ckpt", "Prompter checkpoint"},
                    {"sam-ckpt-region", "region-head checkpoint"},
                    {"sam-ckpt-boundary", "boundary-head checkpoint"},
                    {"images", "image file, directory of images, or manifest"},
                    {"out", "output directory"},
                    {"seed", "point-sampling seed (default 0)"},
                    {"no-mp", "do not feed the mask prompt", true},
                    {"no-pp", "do not feed point prompts", true}},
                   {}),
              prompt_opts)},
        {"evaluate",
         {{"pred", "prediction directory (region/, boundary/)"},
          {"gt", "ground-truth directory (region/, boundary/)"},
          {"report", "report file (default: stdout)"}}},
        {"ablate",
         with({{"config", "configuration file"},
               {"out-table", "output CSV table"},
               {"prompter-ckpt", "shared Prompter checkpoint (default: train one)"},
               {"data", "training manifest (overrides [data] manifest)"},
               {"eval-data", "evaluation manifest (default: the training data)"},
               {"log", "training log"}},
              prompt_opts)},
        {"verify", {{"seed", "oracle seed (default 0)"}}},
    };
    return table;
}

void apply_overrides(Command& cmd) {
    auto& c = cmd.config;
    auto& o = cmd.options;
    if (o.count("n-fg")) c.prompts.n_fg = parse_number<int>("n-fg", o["n-fg"]);
    if (o.count("n-bg")) c.prompts.n_bg = parse_number<int>("n-bg", o["n-bg"]);
    if (o.count("t-fg")) c.prompts.t_fg = parse_real("t-fg", o["t-fg"]);
    if (o.count("t-bg")) c.prompts.t_bg = parse_real("t-bg", o["t-bg"]);
    if (o.count("iterations")) c.train_prompter.iterations = parse_number<std::int64_t>("iterations", o["iterations"]);
    if (o.count("epochs")) c.train_finetune.epochs = parse_number<int>("epochs", o["epochs"]);
    if (o.count("data")) c.data.manifest = o["data"];
    if (cmd.name == "prepare") {
        if (o.count("manifest")) c.data.manifest = o["manifest"];
        if (o.count("lo")) c.data.lo = parse_number<std::int64_t>("lo", o["lo"]);
        if (o.count("hi")) c.data.hi = parse_number<std::int64_t>("hi", o["hi"]);
        if (o.count("tile")) c.data.tile = parse_number<int>("tile", o["tile"]);
        if (o.count("split")) c.data.split = parse_ratios(o["split"]);
        if (o.count("seed")) c.data.seed = parse_number<std::uint64_t>("seed", o["seed"]);
        c.sync_input_size();
    }
    if (o.count("no-ftd")) c.ablation.ftd = false;
    if (o.count("no-ftpe")) c.ablation.ftpe = false;
    if (o.count("no-mp")) c.ablation.mp = false;
    if (o.count("no-pp")) c.ablation.pp = false;
    if (o.count("head")) parse_head(o["head"]);
}

// ---- helpers shared by the commands ----

void ensure_parent(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void write_text(const fs::path& path, const std::string& text) {
    ensure_parent(path);
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::IoError, "cannot write " + path.string());
    out << text;
    require(static_cast<bool>(out), ErrorKind::IoError, "write failed: " + path.string());
}

std::unique_ptr<std::ofstream> open_log(const Command& cmd) {
    if (!cmd.has("log")) return nullptr;
    const fs::path p = cmd.get("log");
    ensure_parent(p);
    auto out = std::make_unique<std::ofstream>(p, std::ios::binary);
    require(static_cast<bool>(*out), ErrorKind::IoError, "cannot write log " + p.string());
    return out;
}

std::vector<Sample> load_dataset(const std::string& manifest) {
    require(!manifest.empty(), ErrorKind::UsageError, "no training data: pass --data or set [data] manifest");
    auto samples = load_samples(read_manifest(manifest));
    require(!samples.empty(), ErrorKind::EmptyInput, "manifest " + manifest + " lists no samples");
    return samples;
}

bool is_image_file(const fs::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    return ext == ".png" || ext == ".tif" || ext == ".tiff" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

std::vector<fs::path> list_images(const fs::path& dir) {
    require(fs::is_directory(dir), ErrorKind::IoError, "not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    return files;
}

AblationFlags flags_from_meta(const Checkpoint& ckpt) {
    AblationFlags f;
    auto it = ckpt.meta.find("flags");
    if (it != ckpt.meta.end() && it->second.size() == 4) {
        f.ftd = it->second[0] == '1';
        f.ftpe = it->second[1] == '1';
        f.mp = it->second[2] == '1';
        f.pp = it->second[3] == '1';
    }
    return f;
}

// ---- commands ----

int cmd_synth(const Command& cmd) {
    const int n = parse_number<int>("n", cmd.get_or("n", "8"));
    const auto seed = parse_number<std::uint64_t>("seed", cmd.get_or("seed", "1"));
    const int size = parse_number<int>("size", cmd.get_or("size", "64"));
    const int parcels = parse_number<int>("parcels", cmd.get_or("parcels", "4"));
    require(n >= 1, ErrorKind::UsageError, "--n must be >= 1");
    const fs::path out = cmd.get("out");
    for (const char* sub : {"images", "region", "boundary", "labels"}) fs::create_directories(out / sub);
    std::vector<ManifestEntry> entries;
    for (int i = 0; i < n; ++i) {
        const auto scene = generate_synthetic_scene(derive_seed(seed, static_cast<std::uint64_t>(i)), parcels, size);
        char name[32];
        std::snprintf(name, sizeof name, "scene_%03d.png", i);
        write_image_rgb((out / "images" / name).string(), scene.image);
        write_mask((out / "region" / name).string(), scene.region_mask);
        write_mask((out / "boundary" / name).string(), scene.boundary_mask);
        write_label_map((out / "labels" / name).string(), scene.labels, size, size);
        entries.push_back({(out / "images" / name).string(), (out / "region" / name).string(),
                           (out / "boundary" / name).string()});
    }
    write_manifest((out / "manifest.tsv").string(), entries);
    return 0;
}

int cmd_prepare(const Command& cmd) {
    const auto& d = cmd.config.data;
    const fs::path out = cmd.get("out");
    const auto entries = read_manifest(cmd.get("manifest"));
    require(!entries.empty(), ErrorKind::EmptyInput, "manifest lists no tiles");
    for (const char* sub : {"images", "region", "boundary"}) fs::create_directories(out / sub);

    std::vector<std::string> ids;
    std::map<std::string, ManifestEntry> by_id;
    for (const auto& e : entries) {
        const auto stem = fs::path(e.image_path).stem().string();
        const auto image = render_bands(read_raw_tile(e.image_path), d.lo, d.hi);
        const auto region = read_mask(e.region_path);
        require(region.height() == image.height() && region.width() == image.width(), ErrorKind::ShapeError,
                "region mask does not match image " + e.image_path);
        const auto img_grid = crop_tiles(image, d.tile);
        const auto reg_grid = crop_tiles(region, d.tile);
        TileGrid<std::uint8_t> bnd_grid;
        if (!e.boundary_path.empty()) {
            const auto boundary = read_mask(e.boundary_path);
            require(boundary.height() == image.height() && boundary.width() == image.width(), ErrorKind::ShapeError,
                    "boundary mask does not match image " + e.image_path);
            bnd_grid = crop_tiles(boundary, d.tile);
        }
        for (int r = 0; r < img_grid.rows; ++r)
            for (int c = 0; c < img_grid.cols; ++c) {
                const auto k = static_cast<std::size_t>(r * img_grid.cols + c);
                const auto id = stem + "_r" + std::to_string(r) + "_c" + std::to_string(c);
                const auto file = id + ".png";
                write_image_rgb((out / "images" / file).string(), img_grid.tiles[k]);
                write_mask((out / "region" / file).string(), reg_grid.tiles[k]);
                ManifestEntry m{(out / "images" / file).string(), (out / "region" / file).string(), ""};
                if (!bnd_grid.tiles.empty()) {
                    write_mask((out / "boundary" / file).string(), bnd_grid.tiles[k]);
                    m.boundary_path = (out / "boundary" / file).string();
                }
                ids.push_back(id);
                by_id[id] = m;
            }
    }
    const auto split = split_dataset(ids, d.split, d.seed);
    auto emit = [&](const std::string& name, const std::vector<std::string>& part) {
        std::vector<ManifestEntry> list;
        for (const auto& id : part) list.push_back(by_id.at(id));
        write_manifest((out / (name + ".tsv")).string(), list);
    };
    std::vector<ManifestEntry> all;
    for (const auto& id : ids) all.push_back(by_id.at(id));
    write_manifest((out / "manifest.tsv").string(), all);
    emit("train", split.train);
    emit("val", split.val);
    emit("test", split.test);
    return 0;
}

int cmd_train_prompter(const Command& cmd) {
    const fs::path out = cmd.get("out");
    const auto data = load_dataset(cmd.config.data.manifest);
    Checkpoint init;
    if (cmd.has("init")) init = load_checkpoint_file(cmd.get("init"));
    auto log = open_log(cmd);
    const auto ckpt = train_prompter(cmd.config, data, cmd.has("init") ? &init : nullptr, log.get());
    ensure_parent(out);
    save_checkpoint_file(out.string(), ckpt);
    return 0;
}

int cmd_finetune(const Command& cmd) {
    const Head head = parse_head(cmd.get("head"));
    const fs::path out = cmd.get("out");
    const auto prompter = load_checkpoint_file(cmd.get("prompter-ckpt"));
    const auto data = load_dataset(cmd.config.data.manifest);
    const auto sam_init = cmd.has("sam-ckpt") ? load_checkpoint_file(cmd.get("sam-ckpt")) : initial_sam_checkpoint(cmd.config);
    auto log = open_log(cmd);
    const auto ckpt = finetune_sam_block(cmd.config, data, prompter, sam_init, head, cmd.config.ablation, log.get());
    ensure_parent(out);
    save_checkpoint_file(out.string(), ckpt);
    return 0;
}

int cmd_predict(const Command& cmd) {
    const auto region_ckpt = load_checkpoint_file(cmd.get("sam-ckpt-region"));
    auto models = assemble_models(load_checkpoint_file(cmd.get("prompter-ckpt")), region_ckpt,
                                  load_checkpoint_file(cmd.get("sam-ckpt-boundary")));
    const auto& o = cmd.options;
    if (o.count("n-fg")) models.config.prompts.n_fg = cmd.config.prompts.n_fg;
    if (o.count("n-bg")) models.config.prompts.n_bg = cmd.config.prompts.n_bg;
    if (o.count("t-fg")) models.config.prompts.t_fg = cmd.config.prompts.t_fg;
    if (o.count("t-bg")) models.config.prompts.t_bg = cmd.config.prompts.t_bg;
    models.config.prompts.validate();
    AblationFlags flags = flags_from_meta(region_ckpt);
    if (cmd.has("no-mp")) flags.mp = false;
    if (cmd.has("no-pp")) flags.pp = false;
    const auto seed = parse_number<std::uint64_t>("seed", cmd.get_or("seed", "0"));

    const fs::path src = cmd.get("images");
    std::vector<fs::path> images;
    if (fs::is_directory(src)) {
        images = list_images(src);
    } else if (src.extension() == ".tsv") {
        for (const auto& e : read_manifest(src.string())) images.emplace_back(e.image_path);
    } else {
        images.push_back(src);
    }
    require(!images.empty(), ErrorKind::EmptyInput, "no input images under " + src.string());

    const fs::path out = cmd.get("out");
    for (const char* sub : {"region", "boundary", "fused", "prompter", "parcels"}) fs::create_directories(out / sub);
    for (const auto& path : images) {
        const auto image = read_image_rgb(path.string());
        const auto pred = predict_scene(models, image, flags, seed);
        const auto file = path.stem().string() + ".png";
        write_mask((out / "region" / file).string(), pred.region);
        write_mask((out / "boundary" / file).string(), pred.boundary);
        write_mask((out / "fused" / file).string(), pred.fused);
        write_mask((out / "prompter" / file).string(), pred.prompter);
        write_label_map((out / "parcels" / file).string(), pred.parcels.labels, pred.parcels.height, pred.parcels.width);
        write_text(out / "parcels" / (path.stem().string() + ".csv"), format_parcel_summary(pred.parcels));
    }
    return 0;
}

int cmd_evaluate(const Command& cmd) {
    const fs::path pred = cmd.get("pred");
    const fs::path gt = cmd.get("gt");
    const auto gt_region = list_images(gt / "region");
    require(!gt_region.empty(), ErrorKind::EmptyInput, "no ground-truth masks under " + (gt / "region").string());
    metrics::ConfusionCounts region, boundary;
    for (const auto& g : gt_region) {
        const auto file = g.filename();
        const auto p_region = pred / "region" / file;
        const auto p_boundary = pred / "boundary" / file;
        const auto g_boundary = gt / "boundary" / file;
        require(fs::exists(p_region), ErrorKind::IoError, "missing prediction " + p_region.string());
        require(fs::exists(p_boundary), ErrorKind::IoError, "missing prediction " + p_boundary.string());
        require(fs::exists(g_boundary), ErrorKind::IoError, "missing ground truth " + g_boundary.string());
        region += metrics::confusion_counts(read_mask(p_region.string()), read_mask(g.string()));
        boundary += metrics::confusion_counts(read_mask(p_boundary.string()), read_mask(g_boundary.string()));
    }
    const auto text = metrics::format_report(metrics::make_report(region, boundary));
    if (cmd.has("report"))
        write_text(cmd.get("report"), text);
    else
        std::cout << text;
    return 0;
}

int cmd_ablate(const Command& cmd) {
    const fs::path table = cmd.get("out-table");
    const auto data = load_dataset(cmd.config.data.manifest);
    const auto eval = cmd.has("eval-data") ? load_dataset(cmd.get("eval-data")) : data;
    auto log = open_log(cmd);
    const auto prompter = cmd.has("prompter-ckpt") ? load_checkpoint_file(cmd.get("prompter-ckpt"))
                                                   : train_prompter(cmd.config, data, nullptr, log.get());
    const auto rows = run_ablation(cmd.config, data, eval, prompter, log.get());
    write_text(table, format_ablation_table(rows));
    return 0;
}

int cmd_verify(const Command& cmd) {
    const auto seed = parse_number<std::uint64_t>("seed", cmd.get_or("seed", "0"));
    bool ok = true;
    for (const auto& r : verification::run_oracle_suite(seed)) {
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
        ok = ok && r.passed;
    }
    return ok ? 0 : 1;
}

}  // namespace

Command parse_args(const std::vector<std::string>& args) {
    CLI::App app{"Farmland boundary delineation: Prompter + SAM-style block", "fabseg"};
    app.require_subcommand(1);
    app.set_help_all_flag("", "");
    std::map<std::string, CLI::App*> subs;
    for (const auto& [name, specs] : command_table()) {
        auto* sub = app.add_subcommand(name, command_descriptions().at(name));
        for (const auto& s : specs) {
            const std::string flag = std::string("--") + s.name;
            if (s.is_switch)
                sub->add_flag(flag, s.help);
            else
                sub->add_option(flag, s.help)->type_size(1);
        }
        subs[name] = sub;
    }

    if (!args.empty() && !args.front().empty() && args.front()[0] != '-' && !subs.count(args.front()))
        fail(ErrorKind::UsageError, "unknown command: " + args.front());

    std::vector<std::string> owned{"fabseg"};
    owned.insert(owned.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : owned) argv.push_back(a.c_str());

    Command cmd;
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        cmd.help = true;
        const CLI::App* target = &app;
        for (const auto& [name, sub] : subs)
            if (sub->parsed()) target = sub;
        cmd.name = target == &app ? "" : target->get_name();
        cmd.usage = target->help();
        return cmd;
    } catch (const CLI::ParseError& e) {
        fail(ErrorKind::UsageError, e.what());
    }

    for (const auto& [name, sub] : subs) {
        if (!sub->parsed()) continue;
        cmd.name = name;
        for (const auto* opt : sub->get_options()) {
            if (opt->count() == 0 || opt->get_lnames().empty()) continue;
            const auto& key = opt->get_lnames().front();
            if (key == "help") continue;
            cmd.options[key] = opt->get_expected_min() == 0 ? "true" : opt->as<std::string>();
        }
    }
    cmd.usage = subs.at(cmd.name)->help();
    if (cmd.has("config")) {
        cmd.config_path = cmd.options.at("config");
        cmd.config = load_config(cmd.config_path);
    }
    apply_overrides(cmd);
    cmd.config.validate();
    return cmd;
}

int run(const Command& cmd) {
    if (cmd.help) {
        std::cout << cmd.usage;
        return 0;
    }
    try {
        if (cmd.name == "synth") return cmd_synth(cmd);
        if (cmd.name == "prepare") return cmd_prepare(cmd);
        if (cmd.name == "train-prompter") return cmd_train_prompter(cmd);
        if (cmd.name == "finetune") return cmd_finetune(cmd);
        if (cmd.name == "predict") return cmd_predict(cmd);
        if (cmd.name == "evaluate") return cmd_evaluate(cmd);
        if (cmd.name == "ablate") return cmd_ablate(cmd);
        if (cmd.name == "verify") return cmd_verify(cmd);
        fail(ErrorKind::UsageError, "unknown command: " + cmd.name);
    } catch (const Error& e) {
        std::cerr << "fabseg " << cmd.name << ": " << e.what() << "\n";
        return e.kind() == ErrorKind::UsageError ? 2 : 1;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "fabseg " << cmd.name << ": " << error_name(ErrorKind::IoError) << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "fabseg " << cmd.name << ": " << e.what() << "\n";
        return 1;
    }
}

int main_entry(const std::vector<std::string>& args) {
    Command cmd;
    try {
        cmd = parse_args(args);
    } catch (const Error& e) {
        std::cerr << "fabseg: " << e.what() << "\n";
        return e.kind() == ErrorKind::UsageError ? 2 : 1;
    }
    return run(cmd);
}

}  // namespace fabseg::cli
