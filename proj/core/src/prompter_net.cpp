#include "fabseg/prompter_net.hpp"

#include <set>
#include <string>

#include "fabseg/errors.hpp"

namespace fabseg {

namespace {

using ag::Var;

const std::string kPrefix = "prompter.";

Var bn(const Var& x, ParamBinder& p, const std::string& name, bool training) {
    ag::BatchNormState state{p.buffer(name + ".running_mean"), p.buffer(name + ".running_var")};
    return ag::batch_norm(x, p.get(name + ".weight"), p.get(name + ".bias"), state, training);
}

Var conv(const Var& x, ParamBinder& p, const std::string& name, ag::Conv2dOptions opts = {}, bool bias = false) {
    return ag::conv2d(x, p.get(name + ".weight"), bias ? p.get(name + ".bias") : Var{}, opts);
}

Var conv_bn_relu(const Var& x, ParamBinder& p, const std::string& name, ag::Conv2dOptions opts, bool training) {
    return ag::relu(bn(conv(x, p, name + ".conv", opts), p, name + ".bn", training));
}

/// Depthwise 3x3 -> BN -> ReLU -> pointwise 1x1 -> BN -> ReLU.
Var separable(const Var& x, ParamBinder& p, const std::string& name, int dilation, bool training) {
    const int c = static_cast<int>(x.dim(1));
    Var y = conv(x, p, name + ".depthwise", {1, dilation, dilation, c});
    y = ag::relu(bn(y, p, name + ".bn_dw", training));
    y = conv(y, p, name + ".pointwise");
    return ag::relu(bn(y, p, name + ".bn", training));
}

void init_separable(ParamInit& init, const std::string& name, int cin, int cout) {
    init.conv(name + ".depthwise", cin, 1, 3, false);
    init.batch_norm(name + ".bn_dw", cin);
    init.conv(name + ".pointwise", cout, cin, 1, false);
    init.batch_norm(name + ".bn", cout);
}

struct StageSpec {
    int stride;
    int dilation;
};

StageSpec stage_spec(std::size_t stage) { return stage < 3 ? StageSpec{2, 1} : StageSpec{1, 2}; }

std::string block_name(std::size_t stage, int block) {
    return kPrefix + "backbone.stage" + std::to_string(stage + 1) + ".block" + std::to_string(block + 1);
}

Var basic_block(const Var& x, ParamBinder& p, const std::string& name, int stride, int dilation, bool training) {
    Var y = conv(x, p, name + ".conv1", {stride, dilation, dilation, 1});
    y = ag::relu(bn(y, p, name + ".bn1", training));
    y = conv(y, p, name + ".conv2", {1, dilation, dilation, 1});
    y = bn(y, p, name + ".bn2", training);
    Var skip = x;
    if (p.has(name + ".downsample.conv.weight"))
        skip = bn(conv(x, p, name + ".downsample.conv", {stride, 0, 1, 1}), p, name + ".downsample.bn", training);
    return ag::relu(ag::add(y, skip));
}

}  // namespace

void PrompterConfig::validate() const {
    require(num_classes == 2, ErrorKind::InvalidArgument, "prompter num_classes must be 2");
    require(backbone_channels.size() == 4, ErrorKind::InvalidArgument, "prompter backbone needs 4 stage widths");
    require(blocks_per_stage >= 1, ErrorKind::InvalidArgument, "blocks_per_stage must be >= 1");
    for (int c : backbone_channels) require(c >= 1, ErrorKind::InvalidArgument, "backbone widths must be >= 1");
    require(aspp_channels >= 1 && decoder_channels >= 1 && low_level_channels >= 1 && aux_channels >= 1,
            ErrorKind::InvalidArgument, "prompter widths must be >= 1");
    require(!aspp_rates.empty(), ErrorKind::InvalidArgument, "aspp_rates must not be empty");
    std::set<int> seen;
    for (int r : aspp_rates) {
        require(r >= 1, ErrorKind::InvalidArgument, "aspp rates must be positive");
        require(seen.insert(r).second, ErrorKind::InvalidArgument, "aspp rates must be distinct");
    }
    require(input_height >= 1 && input_width >= 1 && in_channels >= 1, ErrorKind::InvalidArgument,
            "prompter input size must be positive");
}

ParamStore init_prompter_params(const PrompterConfig& config, std::uint64_t seed) {
    config.validate();
    ParamStore store;
    Rng rng(seed);
    ParamInit init(store, rng);
    const auto& ch = config.backbone_channels;

    init.conv(kPrefix + "backbone.stem.conv", ch[0], config.in_channels, 3, false);
    init.batch_norm(kPrefix + "backbone.stem.bn", ch[0]);
    int cin = ch[0];
    for (std::size_t s = 0; s < 4; ++s) {
        for (int b = 0; b < config.blocks_per_stage; ++b) {
            const auto name = block_name(s, b);
            const int stride = b == 0 ? stage_spec(s).stride : 1;
            init.conv(name + ".conv1", ch[s], cin, 3, false);
            init.batch_norm(name + ".bn1", ch[s]);
            init.conv(name + ".conv2", ch[s], ch[s], 3, false);
            init.batch_norm(name + ".bn2", ch[s]);
            if (stride != 1 || cin != ch[s]) {
                init.conv(name + ".downsample.conv", ch[s], cin, 1, false);
                init.batch_norm(name + ".downsample.bn", ch[s]);
            }
            cin = ch[s];
        }
    }

    const int a = config.aspp_channels;
    for (std::size_t i = 0; i < config.aspp_rates.size(); ++i)
        init_separable(init, kPrefix + "aspp.branch" + std::to_string(i + 1), ch[3], a);
    init.conv(kPrefix + "aspp.pool.conv", a, ch[3], 1, true);
    const int branches = static_cast<int>(config.aspp_rates.size()) + 1;
    init.conv(kPrefix + "aspp.project.conv", a, a * branches, 1, false);
    init.batch_norm(kPrefix + "aspp.project.bn", a);

    init.conv(kPrefix + "decoder.low_level.conv", config.low_level_channels, ch[0], 1, false);
    init.batch_norm(kPrefix + "decoder.low_level.bn", config.low_level_channels);
    init_separable(init, kPrefix + "decoder.fuse", a + config.low_level_channels, config.decoder_channels);
    init.conv(kPrefix + "decoder.classifier", config.num_classes, config.decoder_channels, 1, true);

    init.conv(kPrefix + "aux.conv3", config.aux_channels, ch[2], 3, false);
    init.batch_norm(kPrefix + "aux.bn", config.aux_channels);
    init.conv(kPrefix + "aux.conv1", config.num_classes, config.aux_channels, 1, true);
    return store;
}

PrompterOutput prompter_forward(const Var& image, const PrompterConfig& config, ParamBinder& p, bool training) {
    config.validate();
    require(image.value().rank() == 4 && image.dim(1) == config.in_channels && image.dim(2) == config.input_height &&
                image.dim(3) == config.input_width,
            ErrorKind::ShapeError,
            "prompter input " + shape_str(image.shape()) + " does not match configured size " +
                std::to_string(config.input_height) + "x" + std::to_string(config.input_width));
    const auto H = image.dim(2), W = image.dim(3);

    Var x = conv_bn_relu(image, p, kPrefix + "backbone.stem", {2, 1, 1, 1}, training);
    Var low_level, aux_tap;
    for (std::size_t s = 0; s < 4; ++s) {
        for (int b = 0; b < config.blocks_per_stage; ++b) {
            const int stride = b == 0 ? stage_spec(s).stride : 1;
            x = basic_block(x, p, block_name(s, b), stride, stage_spec(s).dilation, training);
        }
        if (s == 0) low_level = x;
        if (s == 2) aux_tap = x;
    }

    const auto h = x.dim(2), w = x.dim(3);
    std::vector<Var> branches;
    for (std::size_t i = 0; i < config.aspp_rates.size(); ++i)
        branches.push_back(separable(x, p, kPrefix + "aspp.branch" + std::to_string(i + 1), config.aspp_rates[i], training));
    Var pooled = ag::relu(conv(ag::global_avg_pool(x), p, kPrefix + "aspp.pool.conv", {}, true));
    branches.push_back(ag::resize_bilinear(pooled, h, w));
    Var aspp = conv_bn_relu(ag::concat(branches, 1), p, kPrefix + "aspp.project", {}, training);

    Var low = conv_bn_relu(low_level, p, kPrefix + "decoder.low_level", {}, training);
    Var up = ag::resize_bilinear(aspp, low.dim(2), low.dim(3));
    Var fused = separable(ag::concat({up, low}, 1), p, kPrefix + "decoder.fuse", 1, training);
    Var logits = conv(fused, p, kPrefix + "decoder.classifier", {}, true);

    PrompterOutput out;
    out.main_logits = ag::resize_bilinear(logits, H, W);
    if (training) out.aux_logits = aux_head_forward(aux_tap, config, p, training);
    return out;
}

Var aux_head_forward(const Var& features, const PrompterConfig& config, ParamBinder& p, bool training) {
    require(training, ErrorKind::InvalidState, "the auxiliary head is only evaluated in training mode");
    Var y = conv(features, p, kPrefix + "aux.conv3", {1, 1, 1, 1});
    y = bn(y, p, kPrefix + "aux.bn", training);
    y = conv(y, p, kPrefix + "aux.conv1", {}, true);
    return ag::resize_bilinear(y, config.input_height, config.input_width);
}

Tensor mask_logits(const Tensor& main_logits, std::int64_t n) {
    require(main_logits.rank() == 4 && main_logits.dim(1) == 2 && n >= 0 && n < main_logits.dim(0),
            ErrorKind::ShapeError, "expected [N, 2, H, W] prompter logits");
    const auto H = main_logits.dim(2), W = main_logits.dim(3);
    Tensor out({H, W});
    const double* bg = main_logits.data() + n * 2 * H * W;
    const double* fg = bg + H * W;
    for (std::int64_t i = 0; i < H * W; ++i) out[i] = fg[i] - bg[i];
    return out;
}

}  // namespace fabseg
