#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "splitprune/attacks.hpp"
#include "splitprune/data.hpp"
#include "splitprune/model.hpp"
#include "splitprune/pruner.hpp"

namespace splitprune {

enum class ModelFamily { mlp, residual, conv };

struct ModelConfig {
    ModelFamily family = ModelFamily::mlp;
    std::vector<std::size_t> widths{2, 32, 32, 2};  // mlp
    std::size_t width = 16;                         // residual
    std::size_t blocks = 2;                         // residual
    std::size_t members = 1;                        // residual
    double sigma = 0.0;                             // residual
    bool skip = true;                               // residual
    bool eval_noise = false;
    std::vector<std::size_t> conv_channels{8, 8};  // conv
    std::size_t kernel = 3;                        // conv

    bool operator==(const ModelConfig&) const = default;
};

enum class DataKind { blobs, spirals, tiny_images, csv, idx };

struct DataConfig {
    DataKind kind = DataKind::blobs;
    std::size_t n_per_class = 200;
    std::size_t classes = 2;
    std::size_t dim = 2;
    double spread = 0.12;
    double turns = 1.0;
    double noise = 0.05;
    std::size_t height = 8;
    std::size_t width = 8;
    std::size_t channels = 1;
    std::uint64_t seed = 7;
    std::string path;
    std::string labels_path;
    bool header = false;
    double test_fraction = 0.2;
    double val_fraction = 0.1;

    bool operator==(const DataConfig&) const = default;
};

struct OptimConfig {
    double lr = 0.1;
    double momentum = 0.0;
    int epochs = 50;
    std::size_t batch_size = 32;
    std::vector<int> decay_epochs{20, 30, 40};
    double decay_factor = 0.1;

    bool operator==(const OptimConfig&) const = default;
};

struct PrunerConfig {
    Algorithm algorithm = Algorithm::none;
    double beta = 1.0;
    double lambda = 0.0;
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    GroupProx prox = GroupProx::group_lasso;

    bool operator==(const PrunerConfig&) const = default;
};

// Declarative description of one run. Defaults are the desk-scale profile:
// two-class blobs, a 2-32-32-2 MLP, 50 epochs, IFGSM^10 adversarial training.
struct ExperimentConfig {
    ModelConfig model;
    DataConfig data;
    AttackSpec train_attack{AttackFamily::ifgsm, 8.0 / 255.0, 2.0 / 255.0, 10, true, 0.0, 1.0};
    std::vector<AttackSpec> eval_attacks{{AttackFamily::fgsm, 8.0 / 255.0, 0.0, 1, false, 0.0, 1.0},
                                         {AttackFamily::ifgsm, 8.0 / 255.0, 2.0 / 255.0, 20, true, 0.0, 1.0}};
    PrunerConfig pruner;
    OptimConfig optim;
    bool select_robust = false;  // best model by A3 instead of A1
    double monitor_slack = 1e-8;
    bool record_time = false;
    std::uint64_t seed = 0;
    std::string output_dir = "runs/default";

    bool operator==(const ExperimentConfig&) const = default;
};

void validate(const ExperimentConfig& c);

// Line-oriented key=value text. '#' starts a comment line.
std::string serialize(const ExperimentConfig& c);
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// FNV-1a over the canonical serialization with output_dir cleared, as 16 hex digits.
std::string config_hash(const ExperimentConfig& c);

// Learning rate for a 1-based epoch number: lr * factor^(#decay epochs <= epoch).
double learning_rate(const OptimConfig& o, int epoch);

// Model for the config's family, sized to the dataset's example shape and classes.
Model build_model(const ModelConfig& m, const Shape& example_shape, std::size_t classes, std::uint64_t init_seed);
Dataset load_dataset(const DataConfig& d);

struct DataSplits {
    Dataset train;
    Dataset val;
    Dataset test;
};
DataSplits make_splits(const DataConfig& d);

}  // namespace splitprune
