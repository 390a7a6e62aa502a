#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "fabseg/checkpoint.hpp"
#include "fabseg/config.hpp"
#include "fabseg/data_pipeline.hpp"

namespace fabseg {

/// Fresh Prompter or SAM-block checkpoints for a configuration.
Checkpoint initial_prompter_checkpoint(const PipelineConfig& config);
Checkpoint initial_sam_checkpoint(const PipelineConfig& config);

/// Rebuilds the configuration snapshot stored in a checkpoint.
PipelineConfig config_from_checkpoint(const Checkpoint& ckpt);

/// SGD with momentum over the weighted main + auxiliary cross-entropy, poly
/// learning rate. Batches are drawn from a seeded permutation stream. When
/// `log` is set it receives a header and one `step,lr,loss,main,aux` line
/// per step.
Checkpoint train_prompter(const PipelineConfig& config, const std::vector<Sample>& data, const Checkpoint* init = nullptr,
                          std::ostream* log = nullptr);

/// Adam fine-tuning of one decoder head (when flags.ftd) and the prompt
/// encoder (when flags.ftpe) against Dice + Focal loss. The Prompter and the
/// image encoder stay frozen; their outputs are computed once per tile.
/// Point prompts are resampled every step from a seed derived from the step
/// and sample indices. With nothing trainable the input is returned as is.
Checkpoint finetune_sam_block(const PipelineConfig& config, const std::vector<Sample>& data, const Checkpoint& prompter,
                              const Checkpoint& sam_init, Head head, const AblationFlags& flags,
                              std::ostream* log = nullptr);

/// Mask-prompt logit magnitude used when prompts come from ground truth.
inline constexpr double kGroundTruthPromptLogit = 6.0;

struct AblationRow {
    AblationFlags flags;
    double region_iou = 0.0;
    double region_f1 = 0.0;
    double boundary_iou = 0.0;
    double boundary_f1 = 0.0;
};

/// The five ablation settings: full model, then each of FTD, FTPE, MP, PP
/// switched off in turn.
std::vector<AblationFlags> ablation_settings();

/// Fine-tunes both heads for every ablation setting from one shared Prompter
/// checkpoint and evaluates each on `eval_data`.
std::vector<AblationRow> run_ablation(const PipelineConfig& config, const std::vector<Sample>& train_data,
                                      const std::vector<Sample>& eval_data, const Checkpoint& prompter,
                                      std::ostream* log = nullptr);

/// CSV with header `FTD,FTPE,MP,PP,region_iou,region_f1,boundary_iou,boundary_f1`;
/// flags as 1/0, metrics as percentages with two decimals.
std::string format_ablation_table(const std::vector<AblationRow>& rows);

}  // namespace fabseg
