#include "fabseg/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <utility>

#include "fabseg/errors.hpp"
#include "fabseg/inference.hpp"
#include "fabseg/optim.hpp"

namespace fabseg {

namespace {

std::string num(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    return order;
}

std::vector<double> labels_of(const ByteRaster& mask) { return {mask.pixels().begin(), mask.pixels().end()}; }

/// Backpropagates several outputs at once, each with its own upstream
/// gradient, through a scalar junction node.
void backward_many(const std::vector<std::pair<ag::Var, const std::vector<double>*>>& roots) {
    std::vector<ag::Var> parents;
    std::vector<const std::vector<double>*> seeds;
    for (const auto& [v, g] : roots)
        if (v && v.requires_grad()) {
            parents.push_back(v);
            seeds.push_back(g);
        }
    auto junction = ag::make_op(Tensor({1}), parents, [seeds](ag::Node& self) {
        for (std::size_t i = 0; i < seeds.size(); ++i) {
            auto& g = self.parents[i]->grad_buffer();
            for (std::int64_t k = 0; k < g.numel(); ++k) g[k] += self.grad[0] * (*seeds[i])[static_cast<std::size_t>(k)];
        }
    });
    ag::backward(junction);
}

void check_samples(const std::vector<Sample>& data, int tile, bool need_boundary) {
    require(!data.empty(), ErrorKind::EmptyInput, "training dataset is empty");
    for (const auto& s : data) {
        require(s.image.height() == tile && s.image.width() == tile, ErrorKind::ShapeError,
                "sample " + s.id + " is not a " + std::to_string(tile) + "x" + std::to_string(tile) + " tile");
        require(s.region.height() == tile && s.region.width() == tile, ErrorKind::DataError,
                "sample " + s.id + " has no usable region label");
        if (need_boundary)
            require(s.boundary.height() == tile && s.boundary.width() == tile, ErrorKind::DataError,
                    "sample " + s.id + " has no usable boundary label");
    }
}

void require_finite_params(const ParamStore& params, const char* phase, std::int64_t step) {
    for (const auto& [name, t] : params)
        require(t.all_finite(), ErrorKind::NumericalError,
                std::string(phase) + " diverged: parameter " + name + " is non-finite after step " + std::to_string(step));
}

std::string flags_str(const AblationFlags& f) {
    return std::string(f.ftd ? "1" : "0") + (f.ftpe ? "1" : "0") + (f.mp ? "1" : "0") + (f.pp ? "1" : "0");
}

}  // namespace

Checkpoint initial_prompter_checkpoint(const PipelineConfig& config) {
    Checkpoint c;
    c.arrays = init_prompter_params(config.prompter, config.prompter_seed);
    c.meta["kind"] = "prompter";
    c.meta["config"] = to_ini(config);
    return c;
}

Checkpoint initial_sam_checkpoint(const PipelineConfig& config) {
    Checkpoint c;
    c.arrays = init_sam_params(config.sam, config.sam_seed);
    c.frozen_manifest = sam_frozen_manifest();
    c.meta["kind"] = "sam";
    c.meta["config"] = to_ini(config);
    return c;
}

PipelineConfig config_from_checkpoint(const Checkpoint& ckpt) {
    auto it = ckpt.meta.find("config");
    require(it != ckpt.meta.end(), ErrorKind::SchemaError, "checkpoint has no config snapshot");
    return parse_config(it->second);
}

Checkpoint train_prompter(const PipelineConfig& config, const std::vector<Sample>& data, const Checkpoint* init,
                          std::ostream* log) {
    const auto& tc = config.train_prompter;
    require(tc.phase == Phase::Prompter, ErrorKind::InvalidArgument, "train_prompter needs a prompter-phase config");
    tc.validate();
    config.prompter_loss.validate();
    check_samples(data, config.data.tile, false);

    Checkpoint ckpt = init ? *init : initial_prompter_checkpoint(config);
    check_schema(init_prompter_params(config.prompter, 0), ckpt.arrays, "prompter.");
    ParamStore& params = ckpt.arrays;

    Rng rng(tc.seed);
    Sgd sgd(tc.momentum, tc.weight_decay);
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
    const bool use_aux = config.prompter_loss.w_a != 0.0;
    if (log) *log << "step,lr,loss,main,aux\n";

    for (std::int64_t step = 0; step < tc.iterations; ++step) {
        std::vector<const ByteRaster*> images;
        std::vector<double> target;
        for (int b = 0; b < tc.batch_size; ++b) {
            if (cursor == order.size()) {
                order = permutation(data.size(), rng);
                cursor = 0;
            }
            const auto& s = data[order[cursor++]];
            images.push_back(&s.image);
            const auto y = labels_of(s.region);
            target.insert(target.end(), y.begin(), y.end());
        }
        const double lr = poly_lr(step, tc.iterations, tc.lr0, tc.power);

        ParamBinder binder(params, [](const std::string& name) { return starts_with(name, "prompter."); });
        auto out = prompter_forward(ag::constant(images_to_batch(images)), config.prompter, binder, true);
        auto loss = losses::prompter_loss(out.main_logits.value(), use_aux ? out.aux_logits.value() : Tensor{}, target,
                                          config.prompter_loss);
        require(std::isfinite(loss.loss.value), ErrorKind::NumericalError,
                "non-finite prompter loss at step " + std::to_string(step));
        backward_many({{out.main_logits, &loss.grad_main}, {use_aux ? out.aux_logits : ag::Var{}, &loss.grad_aux}});
        sgd.step(params, binder.grads(), lr);
        require_finite_params(params, "prompter training", step);

        if (log)
            *log << step << ',' << num(lr) << ',' << num(loss.loss.value) << ',' << num(loss.loss.term("main")) << ','
                 << num(loss.loss.term("aux")) << '\n';
    }
    ckpt.validate();
    ckpt.meta["kind"] = "prompter";
    ckpt.meta["config"] = to_ini(config);
    ckpt.meta["rng_state"] = rng.state();
    ckpt.meta["steps"] = std::to_string(tc.iterations);
    return ckpt;
}

Checkpoint finetune_sam_block(const PipelineConfig& config, const std::vector<Sample>& data, const Checkpoint& prompter,
                              const Checkpoint& sam_init, Head head, const AblationFlags& flags, std::ostream* log) {
    const auto& tc = config.train_finetune;
    require(tc.phase == Phase::Finetune, ErrorKind::InvalidArgument, "finetune_sam_block needs a finetune-phase config");
    tc.validate();
    config.finetune_loss.validate();
    check_samples(data, config.data.tile, head == Head::Boundary);
    check_schema(init_prompter_params(config.prompter, 0), prompter.arrays, "prompter.");
    check_schema(init_sam_params(config.sam, 0), sam_init.arrays, "sam.");

    const auto decoder = decoder_prefix(head);
    auto trainable = [&](const std::string& name) {
        return (flags.ftd && starts_with(name, decoder)) || (flags.ftpe && starts_with(name, kPromptEncoderPrefix));
    };
    bool any = false;
    for (const auto& [name, t] : sam_init.arrays) any = any || (!is_buffer(name) && trainable(name));
    if (!any) return sam_init;

    // Frozen parts are evaluated once per tile.
    struct Cached {
        Tensor embedding;
        RealRaster mask_prompt;
        std::vector<double> target;
    };
    std::vector<Cached> cache;
    for (const auto& s : data) {
        Cached c;
        c.embedding = image_embedding(config.sam, sam_init.arrays, s.image);
        if (tc.prompt_source == PromptSource::Prompter) {
            c.mask_prompt = prompter_mask_logits(config.prompter, prompter.arrays, s.image);
        } else {
            c.mask_prompt = RealRaster(s.region.height(), s.region.width(), 1, Domain::Logits);
            for (std::size_t i = 0; i < s.region.size(); ++i)
                c.mask_prompt.pixels()[i] = s.region.pixels()[i] ? kGroundTruthPromptLogit : -kGroundTruthPromptLogit;
        }
        c.target = labels_of(head == Head::Region ? s.region : s.boundary);
        cache.push_back(std::move(c));
    }

    Checkpoint ckpt = sam_init;
    ParamStore& params = ckpt.arrays;
    Rng rng(tc.seed);
    Adam adam(tc.beta1, tc.beta2, tc.eps, tc.weight_decay);
    const auto n = static_cast<std::int64_t>(data.size());
    const std::int64_t per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
    const std::int64_t total = per_epoch * tc.epochs;
    if (log) *log << "step,lr,loss,dice,focal\n";

    std::int64_t step = 0;
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        const auto order = permutation(data.size(), rng);
        for (std::int64_t b = 0; b < per_epoch; ++b, ++step) {
            const double lr = poly_lr(step, total, tc.lr0, tc.power);
            const auto first = b * tc.batch_size;
            const auto count = std::min<std::int64_t>(tc.batch_size, n - first);
            ParamBinder binder(std::as_const(params), trainable);
            double loss_sum = 0.0, dice_sum = 0.0, focal_sum = 0.0;
            for (std::int64_t k = 0; k < count; ++k) {
                const auto idx = order[static_cast<std::size_t>(first + k)];
                const auto& c = cache[idx];
                PointPromptSet points;
                if (flags.pp) points = sample_points(c.mask_prompt, config.prompts, derive_seed(tc.seed, step, idx));
                auto prompts = encode_prompts(flags.mp ? &c.mask_prompt : nullptr, flags.pp ? &points : nullptr,
                                              config.sam, binder);
                auto logits = decode_mask(ag::constant(c.embedding), prompts.dense, prompts.sparse, head, config.sam, binder);

                const auto& z = logits.value();
                std::vector<double> y(static_cast<std::size_t>(z.numel()));
                for (std::size_t i = 0; i < y.size(); ++i) y[i] = 1.0 / (1.0 + std::exp(-z[static_cast<std::int64_t>(i)]));
                auto loss = losses::finetune_loss(y, c.target, config.finetune_loss);
                require(std::isfinite(loss.value), ErrorKind::NumericalError,
                        "non-finite fine-tuning loss at step " + std::to_string(step));
                Tensor seed(z.shape());
                for (std::size_t i = 0; i < y.size(); ++i)
                    seed[static_cast<std::int64_t>(i)] = loss.grad[i] * y[i] * (1.0 - y[i]) / static_cast<double>(count);
                ag::backward(logits, seed);
                loss_sum += loss.value;
                dice_sum += loss.term("dice");
                focal_sum += loss.term("focal");
            }
            adam.step(params, binder.grads(), lr);
            require_finite_params(params, "fine-tuning", step);
            if (log)
                *log << step << ',' << num(lr) << ',' << num(loss_sum / count) << ',' << num(dice_sum / count) << ','
                     << num(focal_sum / count) << '\n';
        }
    }
    ckpt.validate();
    ckpt.meta["kind"] = "sam";
    ckpt.meta["config"] = to_ini(config);
    ckpt.meta["head"] = std::string(head_name(head));
    ckpt.meta["flags"] = flags_str(flags);
    ckpt.meta["rng_state"] = rng.state();
    ckpt.meta["steps"] = std::to_string(total);
    return ckpt;
}

std::vector<AblationFlags> ablation_settings() {
    return {{true, true, true, true}, {false, true, true, true}, {true, false, true, true}, {true, true, false, true},
            {true, true, true, false}};
}

std::vector<AblationRow> run_ablation(const PipelineConfig& config, const std::vector<Sample>& train_data,
                                      const std::vector<Sample>& eval_data, const Checkpoint& prompter, std::ostream* log) {
    const auto sam_init = initial_sam_checkpoint(config);
    std::vector<AblationRow> rows;
    for (const auto& flags : ablation_settings()) {
        if (log) *log << "# ablation " << flags_str(flags) << " region\n";
        auto region = finetune_sam_block(config, train_data, prompter, sam_init, Head::Region, flags, log);
        if (log) *log << "# ablation " << flags_str(flags) << " boundary\n";
        auto boundary = finetune_sam_block(config, train_data, prompter, sam_init, Head::Boundary, flags, log);
        // Untrained rows still need the stage metadata for assembly.
        region.meta["kind"] = boundary.meta["kind"] = "sam";
        region.meta["config"] = boundary.meta["config"] = to_ini(config);
        const auto models = assemble_models(prompter, region, boundary);
        const auto report = evaluate_samples(models, eval_data, flags, config.train_finetune.seed);
        AblationRow row;
        row.flags = flags;
        row.region_iou = report.per_class.at("region").scores.iou;
        row.region_f1 = report.per_class.at("region").scores.f1;
        row.boundary_iou = report.per_class.at("boundary").scores.iou;
        row.boundary_f1 = report.per_class.at("boundary").scores.f1;
        rows.push_back(row);
    }
    return rows;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
    std::string out = "FTD,FTPE,MP,PP,region_iou,region_f1,boundary_iou,boundary_f1\n";
    auto pct = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
        return std::string(buf);
    };
    for (const auto& r : rows)
        out += std::string(r.flags.ftd ? "1" : "0") + "," + (r.flags.ftpe ? "1" : "0") + "," + (r.flags.mp ? "1" : "0") + "," +
               (r.flags.pp ? "1" : "0") + "," + pct(r.region_iou) + "," + pct(r.region_f1) + "," + pct(r.boundary_iou) + "," +
               pct(r.boundary_f1) + "\n";
    return out;
}

}  // namespace fabseg
