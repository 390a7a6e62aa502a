#include "fabseg/sam_block.hpp"

#include <cmath>
#include <numbers>

#include "fabseg/errors.hpp"

namespace fabseg {

namespace {

using ag::Var;

const std::string kEnc(kImageEncoderPrefix);
const std::string kPe(kPromptEncoderPrefix);

Var lin(const Var& x, ParamBinder& p, const std::string& name, bool bias = true) {
    return ag::linear(x, p.get(name + ".weight"), bias ? p.get(name + ".bias") : Var{});
}

Var ln(const Var& x, ParamBinder& p, const std::string& name) {
    return ag::layer_norm_rows(x, p.get(name + ".weight"), p.get(name + ".bias"));
}

Var ln2d(const Var& x, ParamBinder& p, const std::string& name) {
    return ag::layer_norm_channels(x, p.get(name + ".weight"), p.get(name + ".bias"));
}

Var multi_head(const Var& q, const Var& k, const Var& v, int heads) {
    const auto d = q.dim(1) / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<Var> outs;
    for (int h = 0; h < heads; ++h) {
        Var qh = ag::slice(q, 1, h * d, d);
        Var kh = ag::slice(k, 1, h * d, d);
        Var vh = ag::slice(v, 1, h * d, d);
        Var attn = ag::softmax_rows(ag::scale(ag::matmul(qh, ag::transpose(kh)), scale));
        outs.push_back(ag::matmul(attn, vh));
    }
    return heads == 1 ? outs.front() : ag::concat(outs, 1);
}

/// Attention with separate q/k/v projections into `internal` dims.
Var attention(const Var& q, const Var& k, const Var& v, ParamBinder& p, const std::string& name, int heads) {
    return lin(multi_head(lin(q, p, name + ".q_proj"), lin(k, p, name + ".k_proj"), lin(v, p, name + ".v_proj"), heads), p,
               name + ".out_proj");
}

void init_attention(ParamInit& init, const std::string& name, int dim, int internal) {
    init.linear(name + ".q_proj", internal, dim, true);
    init.linear(name + ".k_proj", internal, dim, true);
    init.linear(name + ".v_proj", internal, dim, true);
    init.linear(name + ".out_proj", dim, internal, true);
}

Tensor fourier(const std::vector<std::pair<double, double>>& xy, const Tensor& gaussian) {
    const auto half = gaussian.dim(1);
    Tensor out({static_cast<std::int64_t>(xy.size()), 2 * half});
    for (std::size_t i = 0; i < xy.size(); ++i) {
        const double x = 2.0 * xy[i].first - 1.0, y = 2.0 * xy[i].second - 1.0;
        for (std::int64_t j = 0; j < half; ++j) {
            const double proj = 2.0 * std::numbers::pi * (x * gaussian[j] + y * gaussian[half + j]);
            out[static_cast<std::int64_t>(i) * 2 * half + j] = std::sin(proj);
            out[static_cast<std::int64_t>(i) * 2 * half + half + j] = std::cos(proj);
        }
    }
    return out;
}

void init_decoder(ParamInit& init, const std::string& d, const SamConfig& c) {
    const int dim = c.prompt_dim, cross = dim / c.attention_downsample;
    init.normal(d + "output_token", {1, dim}, 1.0);
    for (int i = 0; i < c.decoder_depth; ++i) {
        const auto l = d + "transformer.layers." + std::to_string(i) + ".";
        init_attention(init, l + "self_attn", dim, dim);
        init.norm(l + "norm1", dim);
        init_attention(init, l + "cross_token_to_image", dim, cross);
        init.norm(l + "norm2", dim);
        init.linear(l + "mlp.fc1", c.decoder_mlp_dim, dim, true);
        init.linear(l + "mlp.fc2", dim, c.decoder_mlp_dim, true);
        init.norm(l + "norm3", dim);
        init_attention(init, l + "cross_image_to_token", dim, cross);
        init.norm(l + "norm4", dim);
    }
    init_attention(init, d + "transformer.final_attn", dim, cross);
    init.norm(d + "transformer.norm_final", dim);
    init.conv_transpose(d + "upscale.convt1", dim, dim / 4, 2, true);
    init.norm(d + "upscale.norm", dim / 4);
    init.conv_transpose(d + "upscale.convt2", dim / 4, dim / 8, 2, true);
    init.linear(d + "hyper.fc1", dim, dim, true);
    init.linear(d + "hyper.fc2", dim, dim, true);
    init.linear(d + "hyper.fc3", dim / 8, dim, true);
}

}  // namespace

void SamConfig::validate() const {
    require(patch_size >= 1 && image_height >= patch_size && image_width >= patch_size, ErrorKind::InvalidArgument,
            "sam patch size must fit the image");
    require(image_height % patch_size == 0 && image_width % patch_size == 0, ErrorKind::ShapeError,
            "sam input size must be divisible by patch_size");
    require(embed_dim >= 1 && encoder_heads >= 1 && embed_dim % encoder_heads == 0, ErrorKind::InvalidArgument,
            "embed_dim must be divisible by encoder_heads");
    require(encoder_depth >= 0 && decoder_depth >= 1 && mlp_ratio >= 1 && decoder_mlp_dim >= 1, ErrorKind::InvalidArgument,
            "invalid sam depth settings");
    require(prompt_dim >= 8 && prompt_dim % 8 == 0, ErrorKind::InvalidArgument, "prompt_dim must be a positive multiple of 8");
    require(mask_in_channels >= 4 && mask_in_channels % 4 == 0, ErrorKind::InvalidArgument,
            "mask_in_channels must be a positive multiple of 4");
    require(attention_downsample >= 1 && prompt_dim % attention_downsample == 0, ErrorKind::InvalidArgument,
            "prompt_dim must be divisible by attention_downsample");
    require(decoder_heads >= 1 && prompt_dim % decoder_heads == 0 && (prompt_dim / attention_downsample) % decoder_heads == 0,
            ErrorKind::InvalidArgument, "decoder attention widths must be divisible by decoder_heads");
}

Head parse_head(std::string_view name) {
    if (name == "region") return Head::Region;
    if (name == "boundary") return Head::Boundary;
    fail(ErrorKind::InvalidArgument, "unknown decoder head '" + std::string(name) + "'");
}

std::string_view head_name(Head head) { return head == Head::Region ? "region" : "boundary"; }

std::string decoder_prefix(Head head) { return "sam.decoder_" + std::string(head_name(head)) + "."; }

std::vector<std::string> sam_frozen_manifest() { return {kEnc + "*"}; }

ParamStore init_sam_params(const SamConfig& c, std::uint64_t seed) {
    c.validate();
    ParamStore store;
    {
        Rng rng(derive_seed(seed, 1));
        ParamInit init(store, rng);
        const int e = c.embed_dim;
        init.conv(kEnc + "patch_embed", e, c.in_channels, c.patch_size, true);
        init.normal(kEnc + "pos_embed", {static_cast<std::int64_t>(c.grid_h()) * c.grid_w(), e}, 0.02);
        for (int i = 0; i < c.encoder_depth; ++i) {
            const auto b = kEnc + "blocks." + std::to_string(i) + ".";
            init.norm(b + "norm1", e);
            init.linear(b + "attn.qkv", 3 * e, e, true);
            init.linear(b + "attn.proj", e, e, true);
            init.norm(b + "norm2", e);
            init.linear(b + "mlp.fc1", e * c.mlp_ratio, e, true);
            init.linear(b + "mlp.fc2", e, e * c.mlp_ratio, true);
        }
        init.linear(kEnc + "neck.linear", c.prompt_dim, e, false);
        init.norm(kEnc + "neck.norm", c.prompt_dim);
    }
    {
        Rng rng(derive_seed(seed, 2));
        ParamInit init(store, rng);
        const int m = c.mask_in_channels;
        init.normal(kPe + "pe_gaussian", {2, c.prompt_dim / 2}, 1.0);
        init.normal(kPe + "point_embed.foreground", {c.prompt_dim}, 1.0);
        init.normal(kPe + "point_embed.background", {c.prompt_dim}, 1.0);
        init.normal(kPe + "no_mask_embed", {c.prompt_dim}, 1.0);
        init.conv(kPe + "mask_downscale.conv1", m / 4, 1, 2, true);
        init.norm(kPe + "mask_downscale.norm1", m / 4);
        init.conv(kPe + "mask_downscale.conv2", m, m / 4, 2, true);
        init.norm(kPe + "mask_downscale.norm2", m);
        init.conv(kPe + "mask_downscale.conv3", c.prompt_dim, m, 1, true);
    }
    for (Head head : {Head::Region, Head::Boundary}) {
        Rng rng(derive_seed(seed, 3));
        ParamInit init(store, rng);
        init_decoder(init, decoder_prefix(head), c);
    }
    return store;
}

Var encode_image(const Var& image, const SamConfig& c, ParamBinder& p) {
    c.validate();
    require(image.value().rank() == 4 && image.dim(0) == 1 && image.dim(1) == c.in_channels, ErrorKind::ShapeError,
            "encode_image expects a [1, C, H, W] image, got " + shape_str(image.shape()));
    require(image.dim(2) % c.patch_size == 0 && image.dim(3) % c.patch_size == 0, ErrorKind::ShapeError,
            "image size is not divisible by patch_size");
    require(image.dim(2) == c.image_height && image.dim(3) == c.image_width, ErrorKind::ShapeError,
            "image size does not match the configured input size");
    const int e = c.embed_dim;
    Var x = ag::conv2d(image, p.get(kEnc + "patch_embed.weight"), p.get(kEnc + "patch_embed.bias"),
                       {c.patch_size, 0, 1, 1});
    x = ag::add(ag::grid_to_tokens(x), p.get(kEnc + "pos_embed"));
    for (int i = 0; i < c.encoder_depth; ++i) {
        const auto b = kEnc + "blocks." + std::to_string(i) + ".";
        Var qkv = lin(ln(x, p, b + "norm1"), p, b + "attn.qkv");
        Var a = multi_head(ag::slice(qkv, 1, 0, e), ag::slice(qkv, 1, e, e), ag::slice(qkv, 1, 2 * e, e), c.encoder_heads);
        x = ag::add(x, lin(a, p, b + "attn.proj"));
        Var m = lin(ag::gelu(lin(ln(x, p, b + "norm2"), p, b + "mlp.fc1")), p, b + "mlp.fc2");
        x = ag::add(x, m);
    }
    x = ln(lin(x, p, kEnc + "neck.linear", false), p, kEnc + "neck.norm");
    return ag::tokens_to_grid(x, c.grid_h(), c.grid_w());
}

Tensor point_positional_encoding(const PointPromptSet& points, const SamConfig& c, const Tensor& gaussian) {
    std::vector<std::pair<double, double>> xy;
    for (const auto& pt : points.points) {
        require(pt.row >= 0 && pt.row < c.image_height && pt.col >= 0 && pt.col < c.image_width, ErrorKind::InvalidPrompt,
                "point (" + std::to_string(pt.row) + ", " + std::to_string(pt.col) + ") lies outside the image");
        xy.emplace_back((pt.col + 0.5) / c.image_width, (pt.row + 0.5) / c.image_height);
    }
    return fourier(xy, gaussian);
}

Tensor dense_positional_encoding(const SamConfig& c, const Tensor& gaussian) {
    std::vector<std::pair<double, double>> xy;
    for (int r = 0; r < c.grid_h(); ++r)
        for (int col = 0; col < c.grid_w(); ++col) xy.emplace_back((col + 0.5) / c.grid_w(), (r + 0.5) / c.grid_h());
    return fourier(xy, gaussian);
}

PromptEmbeddings encode_prompts(const RealRaster* mask_prompt, const PointPromptSet* points, const SamConfig& c,
                                ParamBinder& p) {
    c.validate();
    const int h = c.grid_h(), w = c.grid_w(), dim = c.prompt_dim;
    PromptEmbeddings out;
    if (mask_prompt) {
        require(mask_prompt->height() == c.image_height && mask_prompt->width() == c.image_width &&
                    mask_prompt->channels() == 1,
                ErrorKind::ShapeError, "mask prompt must match the image size");
        Var mp = ag::constant(grid_to_tensor(*mask_prompt).reshaped({1, 1, c.image_height, c.image_width}));
        mp = ag::resize_bilinear(mp, 4 * h, 4 * w);
        Var y = ag::conv2d(mp, p.get(kPe + "mask_downscale.conv1.weight"), p.get(kPe + "mask_downscale.conv1.bias"), {2, 0, 1, 1});
        y = ag::gelu(ln2d(y, p, kPe + "mask_downscale.norm1"));
        y = ag::conv2d(y, p.get(kPe + "mask_downscale.conv2.weight"), p.get(kPe + "mask_downscale.conv2.bias"), {2, 0, 1, 1});
        y = ag::gelu(ln2d(y, p, kPe + "mask_downscale.norm2"));
        out.dense = ag::conv2d(y, p.get(kPe + "mask_downscale.conv3.weight"), p.get(kPe + "mask_downscale.conv3.bias"));
    } else {
        out.dense = ag::expand_channels(p.get(kPe + "no_mask_embed"), h, w);
    }

    if (points && points->size() > 0) {
        Var pe = ag::constant(point_positional_encoding(*points, c, *p.buffer(kPe + "pe_gaussian")));
        Var fg = ag::reshape(p.get(kPe + "point_embed.foreground"), {1, dim});
        Var bg = ag::reshape(p.get(kPe + "point_embed.background"), {1, dim});
        std::vector<Var> labels;
        for (const auto& pt : points->points) labels.push_back(pt.foreground ? fg : bg);
        out.sparse = ag::add(pe, ag::concat(labels, 0));
    } else {
        out.sparse = ag::constant(Tensor({0, dim}));
    }
    return out;
}

Var decode_mask(const Var& image_embedding, const Var& dense, const Var& sparse, Head head, const SamConfig& c,
                ParamBinder& p) {
    c.validate();
    const int h = c.grid_h(), w = c.grid_w(), dim = c.prompt_dim;
    const Shape grid_shape{1, dim, h, w};
    require(image_embedding.shape() == grid_shape && dense.shape() == grid_shape, ErrorKind::ShapeError,
            "decode_mask: embeddings must be " + shape_str(grid_shape));
    require(sparse.value().rank() == 2 && sparse.dim(1) == dim, ErrorKind::ShapeError, "decode_mask: point tokens must be [N, c]");
    const auto d = decoder_prefix(head);
    const int heads = c.decoder_heads;

    Var keys = ag::grid_to_tokens(ag::add(image_embedding, dense));
    const Var key_pe = ag::constant(dense_positional_encoding(c, *p.buffer(kPe + "pe_gaussian")));
    Var tokens = sparse.dim(0) > 0 ? ag::concat({p.get(d + "output_token"), sparse}, 0) : p.get(d + "output_token");
    const Var query_pe = tokens;
    Var queries = tokens;

    for (int i = 0; i < c.decoder_depth; ++i) {
        const auto l = d + "transformer.layers." + std::to_string(i) + ".";
        if (i == 0) {
            queries = attention(queries, queries, queries, p, l + "self_attn", heads);
        } else {
            Var q = ag::add(queries, query_pe);
            queries = ag::add(queries, attention(q, q, queries, p, l + "self_attn", heads));
        }
        queries = ln(queries, p, l + "norm1");

        Var q = ag::add(queries, query_pe);
        Var k = ag::add(keys, key_pe);
        queries = ln(ag::add(queries, attention(q, k, keys, p, l + "cross_token_to_image", heads)), p, l + "norm2");

        Var m = lin(ag::relu(lin(queries, p, l + "mlp.fc1")), p, l + "mlp.fc2");
        queries = ln(ag::add(queries, m), p, l + "norm3");

        q = ag::add(queries, query_pe);
        k = ag::add(keys, key_pe);
        keys = ln(ag::add(keys, attention(k, q, queries, p, l + "cross_image_to_token", heads)), p, l + "norm4");
    }
    {
        Var q = ag::add(queries, query_pe);
        Var k = ag::add(keys, key_pe);
        queries = ag::add(queries, attention(q, k, keys, p, d + "transformer.final_attn", heads));
        queries = ln(queries, p, d + "transformer.norm_final");
    }

    Var up = ag::tokens_to_grid(keys, h, w);
    up = ag::conv_transpose2d(up, p.get(d + "upscale.convt1.weight"), p.get(d + "upscale.convt1.bias"));
    up = ag::gelu(ln2d(up, p, d + "upscale.norm"));
    up = ag::gelu(ag::conv_transpose2d(up, p.get(d + "upscale.convt2.weight"), p.get(d + "upscale.convt2.bias")));

    Var token = ag::slice(queries, 0, 0, 1);
    Var hyper = lin(ag::relu(lin(ag::relu(lin(token, p, d + "hyper.fc1")), p, d + "hyper.fc2")), p, d + "hyper.fc3");
    const auto uh = up.dim(2), uw = up.dim(3);
    Var logits = ag::matmul(hyper, ag::reshape(up, {dim / 8, uh * uw}));
    logits = ag::reshape(logits, {1, 1, uh, uw});
    return ag::resize_bilinear(logits, c.image_height, c.image_width);
}

}  // namespace fabseg
