#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "fabseg/losses.hpp"
#include "fabseg/prompt_gen.hpp"
#include "fabseg/prompter_net.hpp"
#include "fabseg/sam_block.hpp"

namespace fabseg {

enum class Phase { Prompter, Finetune };
enum class OptimizerKind { Sgd, Adam };
/// Where fine-tuning takes its prompts from: the frozen Prompter (matches
/// inference) or the ground-truth region mask.
enum class PromptSource { Prompter, GroundTruth };

struct TrainConfig {
    Phase phase = Phase::Prompter;
    OptimizerKind optimizer = OptimizerKind::Sgd;
    int batch_size = 8;
    std::int64_t iterations = 80000;  // prompter phase
    int epochs = 20;                  // fine-tune phase
    double lr0 = 0.004;
    double power = 0.9;
    double weight_decay = 0.0001;
    double momentum = 0.9;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;
    PromptSource prompt_source = PromptSource::Prompter;

    /// Full-scale schedules: SGD, batch 8, 80000 iterations, lr 0.004 and
    /// Adam, batch 4, 20 epochs, lr 0.0003; both poly with decay 0.0001.
    static TrainConfig prompter_defaults();
    static TrainConfig finetune_defaults();
    void validate() const;
};

struct AblationFlags {
    bool ftd = true;   // fine-tune the decoder
    bool ftpe = true;  // fine-tune the prompt encoder
    bool mp = true;    // feed the mask prompt
    bool pp = true;    // feed point prompts
    bool operator==(const AblationFlags&) const = default;
};

struct DataConfig {
    std::string manifest;
    std::int64_t lo = 0;
    std::int64_t hi = 3000;
    int tile = 256;
    std::array<double, 3> split{0.7, 0.15, 0.15};
    std::uint64_t seed = 0;
};

struct PipelineConfig {
    DataConfig data;
    PrompterConfig prompter;
    std::uint64_t prompter_seed = 0;
    SamConfig sam;
    std::uint64_t sam_seed = 0;
    PromptGenConfig prompts;
    losses::PrompterLossWeights prompter_loss;
    losses::FinetuneLossWeights finetune_loss;
    TrainConfig train_prompter = TrainConfig::prompter_defaults();
    TrainConfig train_finetune = TrainConfig::finetune_defaults();
    AblationFlags ablation;

    /// Propagates data.tile into both network input sizes.
    void sync_input_size();
    void validate() const;
};

/// Parses INI text with sections [data], [prompter], [sam], [loss],
/// [train.prompter], [train.finetune], [ablation]. Unknown sections or keys
/// raise InvalidArgument; omitted keys keep their defaults.
PipelineConfig parse_config(const std::string& text);
PipelineConfig load_config(const std::string& path);
/// Serializes every key; parse_config(to_ini(c)) reproduces c exactly.
std::string to_ini(const PipelineConfig& config);

std::array<double, 3> parse_ratios(const std::string& text);

}  // namespace fabseg
