#include "fabseg/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "fabseg/errors.hpp"

namespace fabseg {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& raw) {
    const auto s = trim(raw);
    T v{};
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    require(ec == std::errc{} && ptr == s.data() + s.size(), ErrorKind::InvalidArgument,
            "config key " + key + ": cannot parse '" + raw + "'");
    return v;
}

double parse_real(const std::string& key, const std::string& raw) {
    const auto s = trim(raw);
    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    require(used == s.size() && !s.empty(), ErrorKind::InvalidArgument, "config key " + key + ": cannot parse '" + raw + "'");
    return v;
}

bool parse_bool(const std::string& key, const std::string& raw) {
    const auto s = trim(raw);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    fail(ErrorKind::InvalidArgument, "config key " + key + ": expected a boolean, got '" + raw + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& raw) {
    std::vector<int> out;
    std::stringstream ss(raw);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_number<int>(key, item));
    require(!out.empty(), ErrorKind::InvalidArgument, "config key " + key + ": empty list");
    return out;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string join(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::string optimizer_name(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer(const std::string& key, const std::string& raw) {
    const auto s = trim(raw);
    if (s == "sgd") return OptimizerKind::Sgd;
    if (s == "adam") return OptimizerKind::Adam;
    fail(ErrorKind::InvalidArgument, "config key " + key + ": unknown optimizer '" + raw + "'");
}

std::string source_name(PromptSource s) { return s == PromptSource::Prompter ? "prompter" : "ground_truth"; }

PromptSource parse_source(const std::string& key, const std::string& raw) {
    const auto s = trim(raw);
    if (s == "prompter") return PromptSource::Prompter;
    if (s == "ground_truth") return PromptSource::GroundTruth;
    fail(ErrorKind::InvalidArgument, "config key " + key + ": unknown prompt source '" + raw + "'");
}

using Setter = std::function<void(PipelineConfig&, const std::string& key, const std::string& value)>;
using Getter = std::function<std::string(const PipelineConfig&)>;

struct Key {
    std::string section;
    std::string name;
    Setter set;
    Getter get;
};

template <typename T, typename Member>
Key int_key(std::string section, std::string name, Member member) {
    return {section, name,
            [member](PipelineConfig& c, const std::string& k, const std::string& v) { member(c) = parse_number<T>(k, v); },
            [member](const PipelineConfig& c) { return std::to_string(member(const_cast<PipelineConfig&>(c))); }};
}

template <typename Member>
Key real_key(std::string section, std::string name, Member member) {
    return {section, name,
            [member](PipelineConfig& c, const std::string& k, const std::string& v) { member(c) = parse_real(k, v); },
            [member](const PipelineConfig& c) { return fmt(member(const_cast<PipelineConfig&>(c))); }};
}

template <typename Member>
Key bool_key(std::string section, std::string name, Member member) {
    return {section, name,
            [member](PipelineConfig& c, const std::string& k, const std::string& v) { member(c) = parse_bool(k, v); },
            [member](const PipelineConfig& c) { return std::string(member(const_cast<PipelineConfig&>(c)) ? "true" : "false"); }};
}

template <typename Member>
Key list_key(std::string section, std::string name, Member member) {
    return {section, name,
            [member](PipelineConfig& c, const std::string& k, const std::string& v) { member(c) = parse_int_list(k, v); },
            [member](const PipelineConfig& c) { return join(member(const_cast<PipelineConfig&>(c))); }};
}

void add_train_keys(std::vector<Key>& keys, const std::string& s, TrainConfig PipelineConfig::*t) {
    auto tc = [t](PipelineConfig& c) -> TrainConfig& { return c.*t; };
    keys.push_back({s, "optimizer",
                    [tc](PipelineConfig& c, const std::string& k, const std::string& v) { tc(c).optimizer = parse_optimizer(k, v); },
                    [tc](const PipelineConfig& c) { return optimizer_name(tc(const_cast<PipelineConfig&>(c)).optimizer); }});
    keys.push_back(int_key<int>(s, "batch_size", [tc](PipelineConfig& c) -> int& { return tc(c).batch_size; }));
    keys.push_back(int_key<std::int64_t>(s, "iterations", [tc](PipelineConfig& c) -> std::int64_t& { return tc(c).iterations; }));
    keys.push_back(int_key<int>(s, "epochs", [tc](PipelineConfig& c) -> int& { return tc(c).epochs; }));
    keys.push_back(real_key(s, "lr0", [tc](PipelineConfig& c) -> double& { return tc(c).lr0; }));
    keys.push_back(real_key(s, "power", [tc](PipelineConfig& c) -> double& { return tc(c).power; }));
    keys.push_back(real_key(s, "weight_decay", [tc](PipelineConfig& c) -> double& { return tc(c).weight_decay; }));
    keys.push_back(real_key(s, "momentum", [tc](PipelineConfig& c) -> double& { return tc(c).momentum; }));
    keys.push_back(real_key(s, "beta1", [tc](PipelineConfig& c) -> double& { return tc(c).beta1; }));
    keys.push_back(real_key(s, "beta2", [tc](PipelineConfig& c) -> double& { return tc(c).beta2; }));
    keys.push_back(real_key(s, "eps", [tc](PipelineConfig& c) -> double& { return tc(c).eps; }));
    keys.push_back(int_key<std::uint64_t>(s, "seed", [tc](PipelineConfig& c) -> std::uint64_t& { return tc(c).seed; }));
    keys.push_back({s, "prompt_source",
                    [tc](PipelineConfig& c, const std::string& k, const std::string& v) { tc(c).prompt_source = parse_source(k, v); },
                    [tc](const PipelineConfig& c) { return source_name(tc(const_cast<PipelineConfig&>(c)).prompt_source); }});
}

const std::vector<Key>& registry() {
    static const std::vector<Key> keys = [] {
        std::vector<Key> k;
        k.push_back({"data", "manifest", [](PipelineConfig& c, const std::string&, const std::string& v) { c.data.manifest = trim(v); },
                     [](const PipelineConfig& c) { return c.data.manifest; }});
        k.push_back(int_key<std::int64_t>("data", "lo", [](PipelineConfig& c) -> std::int64_t& { return c.data.lo; }));
        k.push_back(int_key<std::int64_t>("data", "hi", [](PipelineConfig& c) -> std::int64_t& { return c.data.hi; }));
        k.push_back(int_key<int>("data", "tile", [](PipelineConfig& c) -> int& { return c.data.tile; }));
        k.push_back({"data", "split", [](PipelineConfig& c, const std::string&, const std::string& v) { c.data.split = parse_ratios(v); },
                     [](const PipelineConfig& c) {
                         return fmt(c.data.split[0]) + "," + fmt(c.data.split[1]) + "," + fmt(c.data.split[2]);
                     }});
        k.push_back(int_key<std::uint64_t>("data", "seed", [](PipelineConfig& c) -> std::uint64_t& { return c.data.seed; }));

        k.push_back(list_key("prompter", "backbone_channels", [](PipelineConfig& c) -> std::vector<int>& { return c.prompter.backbone_channels; }));
        k.push_back(int_key<int>("prompter", "blocks_per_stage", [](PipelineConfig& c) -> int& { return c.prompter.blocks_per_stage; }));
        k.push_back(list_key("prompter", "aspp_rates", [](PipelineConfig& c) -> std::vector<int>& { return c.prompter.aspp_rates; }));
        k.push_back(int_key<int>("prompter", "aspp_channels", [](PipelineConfig& c) -> int& { return c.prompter.aspp_channels; }));
        k.push_back(int_key<int>("prompter", "low_level_channels", [](PipelineConfig& c) -> int& { return c.prompter.low_level_channels; }));
        k.push_back(int_key<int>("prompter", "decoder_channels", [](PipelineConfig& c) -> int& { return c.prompter.decoder_channels; }));
        k.push_back(int_key<int>("prompter", "aux_channels", [](PipelineConfig& c) -> int& { return c.prompter.aux_channels; }));
        k.push_back(int_key<std::uint64_t>("prompter", "seed", [](PipelineConfig& c) -> std::uint64_t& { return c.prompter_seed; }));

        k.push_back(int_key<int>("sam", "patch_size", [](PipelineConfig& c) -> int& { return c.sam.patch_size; }));
        k.push_back(int_key<int>("sam", "embed_dim", [](PipelineConfig& c) -> int& { return c.sam.embed_dim; }));
        k.push_back(int_key<int>("sam", "encoder_depth", [](PipelineConfig& c) -> int& { return c.sam.encoder_depth; }));
        k.push_back(int_key<int>("sam", "encoder_heads", [](PipelineConfig& c) -> int& { return c.sam.encoder_heads; }));
        k.push_back(int_key<int>("sam", "mlp_ratio", [](PipelineConfig& c) -> int& { return c.sam.mlp_ratio; }));
        k.push_back(int_key<int>("sam", "prompt_dim", [](PipelineConfig& c) -> int& { return c.sam.prompt_dim; }));
        k.push_back(int_key<int>("sam", "mask_in_channels", [](PipelineConfig& c) -> int& { return c.sam.mask_in_channels; }));
        k.push_back(int_key<int>("sam", "decoder_depth", [](PipelineConfig& c) -> int& { return c.sam.decoder_depth; }));
        k.push_back(int_key<int>("sam", "decoder_heads", [](PipelineConfig& c) -> int& { return c.sam.decoder_heads; }));
        k.push_back(int_key<int>("sam", "decoder_mlp_dim", [](PipelineConfig& c) -> int& { return c.sam.decoder_mlp_dim; }));
        k.push_back(int_key<int>("sam", "attention_downsample", [](PipelineConfig& c) -> int& { return c.sam.attention_downsample; }));
        k.push_back(int_key<std::uint64_t>("sam", "seed", [](PipelineConfig& c) -> std::uint64_t& { return c.sam_seed; }));
        k.push_back(int_key<int>("sam", "n_fg", [](PipelineConfig& c) -> int& { return c.prompts.n_fg; }));
        k.push_back(int_key<int>("sam", "n_bg", [](PipelineConfig& c) -> int& { return c.prompts.n_bg; }));
        k.push_back(real_key("sam", "t_fg", [](PipelineConfig& c) -> double& { return c.prompts.t_fg; }));
        k.push_back(real_key("sam", "t_bg", [](PipelineConfig& c) -> double& { return c.prompts.t_bg; }));

        k.push_back(real_key("loss", "w_m", [](PipelineConfig& c) -> double& { return c.prompter_loss.w_m; }));
        k.push_back(real_key("loss", "w_a", [](PipelineConfig& c) -> double& { return c.prompter_loss.w_a; }));
        k.push_back(real_key("loss", "w_d", [](PipelineConfig& c) -> double& { return c.finetune_loss.w_d; }));
        k.push_back(real_key("loss", "w_f", [](PipelineConfig& c) -> double& { return c.finetune_loss.w_f; }));
        k.push_back(real_key("loss", "alpha", [](PipelineConfig& c) -> double& { return c.finetune_loss.alpha; }));
        k.push_back(real_key("loss", "gamma", [](PipelineConfig& c) -> double& { return c.finetune_loss.gamma; }));

        add_train_keys(k, "train.prompter", &PipelineConfig::train_prompter);
        add_train_keys(k, "train.finetune", &PipelineConfig::train_finetune);

        k.push_back(bool_key("ablation", "ftd", [](PipelineConfig& c) -> bool& { return c.ablation.ftd; }));
        k.push_back(bool_key("ablation", "ftpe", [](PipelineConfig& c) -> bool& { return c.ablation.ftpe; }));
        k.push_back(bool_key("ablation", "mp", [](PipelineConfig& c) -> bool& { return c.ablation.mp; }));
        k.push_back(bool_key("ablation", "pp", [](PipelineConfig& c) -> bool& { return c.ablation.pp; }));
        return k;
    }();
    return keys;
}

}  // namespace

TrainConfig TrainConfig::prompter_defaults() { return {}; }

TrainConfig TrainConfig::finetune_defaults() {
    TrainConfig t;
    t.phase = Phase::Finetune;
    t.optimizer = OptimizerKind::Adam;
    t.batch_size = 4;
    t.epochs = 20;
    t.lr0 = 0.0003;
    return t;
}

void TrainConfig::validate() const {
    require(lr0 > 0.0, ErrorKind::InvalidArgument, "lr0 must be > 0");
    require(batch_size >= 1, ErrorKind::InvalidArgument, "batch_size must be >= 1");
    require(power >= 0.0 && weight_decay >= 0.0, ErrorKind::InvalidArgument, "power and weight_decay must be >= 0");
    if (phase == Phase::Prompter)
        require(iterations >= 1, ErrorKind::InvalidArgument, "iterations must be >= 1");
    else
        require(epochs >= 1, ErrorKind::InvalidArgument, "epochs must be >= 1");
}

void PipelineConfig::sync_input_size() {
    prompter.input_height = prompter.input_width = data.tile;
    sam.image_height = sam.image_width = data.tile;
}

void PipelineConfig::validate() const {
    require(data.lo < data.hi, ErrorKind::InvalidRange, "data.lo must be < data.hi");
    require(data.tile >= 1, ErrorKind::InvalidArgument, "data.tile must be >= 1");
    prompter.validate();
    sam.validate();
    prompts.validate();
    prompter_loss.validate();
    finetune_loss.validate();
    train_prompter.validate();
    train_finetune.validate();
}

std::array<double, 3> parse_ratios(const std::string& text) {
    std::array<double, 3> r{};
    std::stringstream ss(text);
    std::string item;
    std::size_t n = 0;
    while (std::getline(ss, item, ',')) {
        require(n < 3, ErrorKind::InvalidArgument, "split needs exactly three ratios");
        r[n++] = parse_real("split", item);
    }
    require(n == 3, ErrorKind::InvalidArgument, "split needs exactly three ratios");
    return r;
}

PipelineConfig parse_config(const std::string& text) {
    boost::property_tree::ptree tree;
    std::istringstream in(text);
    try {
        boost::property_tree::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        fail(ErrorKind::InvalidArgument, std::string("config: ") + e.message() + " at line " + std::to_string(e.line()));
    }
    std::map<std::pair<std::string, std::string>, const Key*> lookup;
    for (const auto& k : registry()) lookup[{k.section, k.name}] = &k;

    PipelineConfig c;
    for (const auto& [section, body] : tree) {
        require(!body.empty() || body.data().empty(), ErrorKind::InvalidArgument, "config: key outside of a section: " + section);
        for (const auto& [name, value] : body) {
            auto it = lookup.find({section, name});
            require(it != lookup.end(), ErrorKind::InvalidArgument, "config: unknown key [" + section + "] " + name);
            it->second->set(c, section + "." + name, value.data());
        }
    }
    c.train_prompter.phase = Phase::Prompter;
    c.train_finetune.phase = Phase::Finetune;
    c.sync_input_size();
    c.validate();
    return c;
}

PipelineConfig load_config(const std::string& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::IoError, "cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string to_ini(const PipelineConfig& config) {
    std::string out, current;
    for (const auto& k : registry()) {
        if (k.section != current) {
            out += (current.empty() ? "" : "\n") + std::string("[") + k.section + "]\n";
            current = k.section;
        }
        out += k.name + " = " + k.get(config) + "\n";
    }
    return out;
}

}  // namespace fabseg
