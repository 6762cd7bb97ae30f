#pragma once

#include "mogen/discriminator.hpp"
#include "mogen/evaluation.hpp"
#include "mogen/generator.hpp"
#include "mogen/gp_prior.hpp"
#include "mogen/nn.hpp"
#include "mogen/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace mogen {

/// Self-describing binary checkpoint, little-endian:
///   "MGCK1", u32 header length, JSON header,
///   u32 blob count, then per blob: u32 name length, name, u32 rank,
///   rank x u64 dims, f32 values.
struct Blob {
  std::string name;
  ag::Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  nlohmann::json header;
  std::vector<Blob> blobs;

  const Blob* find(const std::string& name) const;
};

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes);
void write_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Appends every tensor of `ps` as "<prefix><name>".
void store_parameters(Checkpoint& ck, const std::string& prefix, const nn::ParameterSet& ps);
/// Overwrites `ps` from the blobs; a missing blob or a shape mismatch is a
/// DataError naming the parameter.
void load_parameters(const Checkpoint& ck, const std::string& prefix, nn::ParameterSet& ps);

nlohmann::json to_json(const GeneratorConfig& cfg);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const StgcnConfig& cfg);
StgcnConfig stgcn_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DiscriminatorConfig& cfg);
DiscriminatorConfig discriminator_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RecognizerConfig& cfg);
RecognizerConfig recognizer_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GPConfig& cfg);
GPConfig gp_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Generator with its latent prior, so a checkpoint alone can sample.
struct GeneratorBundle {
  Generator generator;
  LatentPrior prior = LatentPrior::GaussianProcess;
  GPConfig gp;
  nlohmann::json extra;  // provenance (config hash, iteration, ...)
};

void save_generator(const std::filesystem::path& path, const Generator& gen, LatentPrior prior, const GPConfig& gp,
                    const nlohmann::json& extra = nlohmann::json::object());
GeneratorBundle load_generator(const std::filesystem::path& path);

void save_recognizer(const std::filesystem::path& path, const Recognizer& rec,
                     const nlohmann::json& extra = nlohmann::json::object());
Recognizer load_recognizer(const std::filesystem::path& path);

/// Both models, both optimisers, the random streams, the iteration counter
/// and the log; enough to continue a run.
void save_training_state(const std::filesystem::path& path, GanTrainer& trainer, const GPConfig& gp,
                         const nlohmann::json& extra = nlohmann::json::object());
/// Restores into a trainer built with the same configurations.
void restore_training_state(const std::filesystem::path& path, GanTrainer& trainer);

}  // namespace mogen
