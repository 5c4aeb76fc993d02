#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kwspot/datamodel.hpp"
#include "kwspot/losses.hpp"
#include "kwspot/network.hpp"

namespace kwspot {

// synthetic:real sample proportion per mixing unit (e.g. 2:1).
struct MixSchedule {
  int synthetic = 1;
  int real = 0;
};

enum class TrainPhase { pretrain, finetune };

struct TrainConfig {
  TrainPhase phase = TrainPhase::pretrain;
  int iterations = 2000;
  int batch_size = 4;
  double learning_rate = 0.01;
  int lr_decay_step = -1;  // step at which lr drops by lr_decay_factor; -1 = never
  double lr_decay_factor = 0.1;
  int warmup_steps = 0;  // linear ramp to the base rate
  double momentum = 0.9;
  double weight_decay = 1e-4;
  uint64_t seed = 0;
  MixSchedule mix;        // finetune only
  int shorter_side = 256;
  int checkpoint_interval = 0;  // 0 = checkpoint only at the end

  // Per-image sampling caps.
  int rpn_sample = 64;
  double rpn_pos_fraction = 0.5;
  int roi_sample = 32;
  double roi_pos_fraction = 0.25;
  int mask_sample = 4;

  void validate() const;  // throws ConfigError
};

TrainConfig load_train_config(const std::string& path);
void save_train_config(const TrainConfig& cfg, const std::string& path);

// Deterministic sample stream: draw t is a pure function of (seed, t), so a
// resumed run replays the identical sequence and shards are order-free.
// Origin is drawn per sample with probability s / (s + r) of synthetic; the
// index is uniform over the chosen pool.
class MixStream {
 public:
  MixStream(int n_synthetic, int n_real, MixSchedule schedule, uint64_t seed);

  struct Draw {
    Origin origin;
    int index;
  };
  Draw at(int64_t t) const;

 private:
  int n_synth_;
  int n_real_;
  double p_synth_;
  uint64_t seed_;
};

// Rescales the image (bilinear) and annotations so the shorter side matches
// `target`. No-op when it already does.
ImageSample resize_to_shorter_side(const ImageSample& sample, int target);

class Trainer {
 public:
  Trainer(Detector<float>& model, TrainConfig cfg);

  const TrainConfig& config() const { return cfg_; }
  int step() const { return step_; }
  double learning_rate_at(int step) const;

  // Forward + target assignment + losses (Eq. 2 gate applied per sample) +
  // one SGD(momentum) update. Throws NonFiniteLoss with the batch ids on a
  // non-finite total.
  LossReport train_step(const std::vector<const ImageSample*>& batch);

  // Pretrain draws from `synthetic` only; finetune mixes `synthetic` and
  // `real` per the schedule. Writes the metrics CSV row by row and
  // checkpoints at the end (and every checkpoint_interval steps).
  void run_phase(const std::vector<ImageSample>& synthetic,
                 const std::vector<ImageSample>* real, const std::string& checkpoint_out,
                 const std::string& metrics_out);

  void save_checkpoint_file(const std::string& path) const;
  void load_checkpoint_file(const std::string& path);

  static const char* metrics_csv_header();

 private:
  void sgd_update(nn::GradStore<float>& grads, double lr);

  Detector<float>& model_;
  TrainConfig cfg_;
  std::vector<nn::Tensor<float>> momentum_;
  int step_ = 0;
};

std::string loss_report_csv_row(int step, double lr, const LossReport& r);

}  // namespace kwspot
