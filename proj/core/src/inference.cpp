#include "fabseg/inference.hpp"

#include "fabseg/errors.hpp"
#include "fabseg/trainer.hpp"

namespace fabseg {

RealRaster prompter_mask_logits(const PrompterConfig& config, const ParamStore& params, const ByteRaster& tile) {
    ParamBinder binder(params);
    auto out = prompter_forward(ag::constant(image_to_tensor(tile)), config, binder, false);
    return mask_prompt_from_logits(mask_logits(out.main_logits.value()));
}

Tensor image_embedding(const SamConfig& config, const ParamStore& params, const ByteRaster& tile) {
    ParamBinder binder(params);
    return encode_image(ag::constant(image_to_tensor(tile)), config, binder).value();
}

RealRaster decode_tile(const SamConfig& config, const ParamStore& params, const Tensor& embedding,
                       const RealRaster* mask_prompt, const PointPromptSet* points, Head head) {
    ParamBinder binder(params);
    auto prompts = encode_prompts(mask_prompt, points, config, binder);
    auto logits = decode_mask(ag::constant(embedding), prompts.dense, prompts.sparse, head, config, binder);
    return tensor_to_grid(logits.value().reshaped({config.image_height, config.image_width}), Domain::Logits);
}

PointPromptSet sample_points(const RealRaster& mask_prompt, const PromptGenConfig& config, std::uint64_t seed) {
    try {
        return generate_point_prompts(to_probability_map(mask_prompt), config, seed);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::NoEligiblePixels) throw;
        PointPromptSet empty;
        empty.requested_fg = config.n_fg;
        empty.requested_bg = config.n_bg;
        empty.shortfall_fg = config.n_fg;
        empty.shortfall_bg = config.n_bg;
        return empty;
    }
}

Models assemble_models(const Checkpoint& prompter, const Checkpoint& sam_region, const Checkpoint& sam_boundary) {
    require(prompter.meta.count("kind") && prompter.meta.at("kind") == "prompter", ErrorKind::SchemaError,
            "expected a prompter checkpoint");
    for (const auto* c : {&sam_region, &sam_boundary})
        require(c->meta.count("kind") && c->meta.at("kind") == "sam", ErrorKind::SchemaError, "expected a SAM-block checkpoint");
    Models m;
    m.config = config_from_checkpoint(sam_region);
    const auto pc = config_from_checkpoint(prompter);
    m.config.prompter = pc.prompter;
    require(pc.data.tile == m.config.data.tile, ErrorKind::SchemaError, "prompter and SAM-block tile sizes differ");
    require(config_from_checkpoint(sam_boundary).sam.prompt_dim == m.config.sam.prompt_dim, ErrorKind::SchemaError,
            "region and boundary checkpoints use different SAM-block shapes");

    check_schema(init_prompter_params(m.config.prompter, 0), prompter.arrays, "prompter.");
    const auto expected = init_sam_params(m.config.sam, 0);
    check_schema(expected, sam_region.arrays, "sam.");
    check_schema(expected, sam_boundary.arrays, decoder_prefix(Head::Boundary));

    m.prompter = prompter.arrays;
    m.sam = sam_region.arrays;
    for (const auto& [name, t] : sam_boundary.arrays)
        if (starts_with(name, decoder_prefix(Head::Boundary))) m.sam[name] = t;
    return m;
}

TilePrediction predict_tile(const Models& models, const ByteRaster& tile, const AblationFlags& flags, std::uint64_t seed) {
    const auto& c = models.config;
    TilePrediction out;
    out.prompter_logits = prompter_mask_logits(c.prompter, models.prompter, tile);
    if (flags.pp) out.points = sample_points(out.prompter_logits, c.prompts, seed);
    const Tensor embedding = image_embedding(c.sam, models.sam, tile);
    const RealRaster* mp = flags.mp ? &out.prompter_logits : nullptr;
    const PointPromptSet* pp = flags.pp ? &out.points : nullptr;
    out.region_logits = decode_tile(c.sam, models.sam, embedding, mp, pp, Head::Region);
    out.boundary_logits = decode_tile(c.sam, models.sam, embedding, mp, pp, Head::Boundary);
    return out;
}

ScenePrediction predict_scene(const Models& models, const ByteRaster& image, const AblationFlags& flags, std::uint64_t seed) {
    const int tile = models.config.data.tile;
    require(image.channels() == models.config.sam.in_channels, ErrorKind::ShapeError, "image channel count does not match the models");
    const auto grid = crop_tiles<std::uint8_t>(image, tile, 0);
    TileGrid<double> prompter_grid, region_grid, boundary_grid;
    for (auto* g : {&prompter_grid, &region_grid, &boundary_grid}) {
        g->rows = grid.rows;
        g->cols = grid.cols;
        g->tile_size = tile;
        g->source_height = grid.source_height;
        g->source_width = grid.source_width;
    }
    for (std::size_t i = 0; i < grid.tiles.size(); ++i) {
        auto pred = predict_tile(models, grid.tiles[i], flags, derive_seed(seed, i));
        prompter_grid.tiles.push_back(std::move(pred.prompter_logits));
        region_grid.tiles.push_back(std::move(pred.region_logits));
        boundary_grid.tiles.push_back(std::move(pred.boundary_logits));
    }
    ScenePrediction out;
    out.prompter = binarize(stitch_tiles(prompter_grid));
    out.region = binarize(stitch_tiles(region_grid));
    out.boundary = binarize(stitch_tiles(boundary_grid));
    out.fused = symmetric_difference(out.region, out.boundary);
    out.parcels = extract_parcels(out.region, out.boundary);
    return out;
}

double prompter_pixel_accuracy(const PrompterConfig& config, const ParamStore& params, const std::vector<Sample>& data) {
    require(!data.empty(), ErrorKind::EmptyInput, "no samples to evaluate");
    std::int64_t correct = 0, total = 0;
    for (const auto& s : data) {
        const auto logits = prompter_mask_logits(config, params, s.image);
        require(s.region.height() == logits.height() && s.region.width() == logits.width(), ErrorKind::ShapeError,
                "region label does not match the image size");
        for (std::size_t i = 0; i < logits.size(); ++i) {
            const int pred = logits.pixels()[i] > 0.0 ? 1 : 0;
            correct += pred == s.region.pixels()[i];
            ++total;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

metrics::MetricsReport evaluate_samples(const Models& models, const std::vector<Sample>& data, const AblationFlags& flags,
                                        std::uint64_t seed) {
    require(!data.empty(), ErrorKind::EmptyInput, "no samples to evaluate");
    metrics::ConfusionCounts region, boundary;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& s = data[i];
        require(!s.boundary.empty(), ErrorKind::DataError, "sample " + s.id + " has no boundary label");
        auto pred = predict_scene(models, s.image, flags, derive_seed(seed, i));
        region += metrics::confusion_counts(pred.region, s.region);
        boundary += metrics::confusion_counts(pred.boundary, s.boundary);
    }
    return metrics::make_report(region, boundary);
}

}  // namespace fabseg
