#include "lwbc/checkpoint.hpp"

#include <fstream>

#include "lwbc/io.hpp"

namespace lwbc {
namespace {

template <typename Block>
nlohmann::json flat(const Block& b) {
  return std::vector<double>(b.data(), b.data() + b.size());
}

template <typename Block>
void unflat(const nlohmann::json& j, const char* key, Block& b) {
  const auto& arr = j.at(key);
  if (!arr.is_array() || static_cast<Eigen::Index>(arr.size()) != b.size()) {
    throw ValidationError(std::string("checkpoint: field '") + key + "' has the wrong length");
  }
  for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = arr[static_cast<std::size_t>(i)].get<double>();
}

}  // namespace

nlohmann::json checkpoint_to_json(const Classifier& c) {
  nlohmann::json j;
  j["format"] = "lwbc-classifier";
  j["version"] = kCheckpointVersion;
  j["d_in"] = c.input_dim();
  j["d_hidden"] = c.hidden_dim();
  j["classes"] = c.num_classes();
  j["w1"] = flat(c.w1);
  j["b1"] = flat(c.b1);
  j["w2"] = flat(c.w2);
  j["b2"] = flat(c.b2);
  const auto& a = c.adam;
  j["adam"] = {{"step", a.step},       {"m_w1", flat(a.m_w1)}, {"v_w1", flat(a.v_w1)}, {"m_b1", flat(a.m_b1)},
               {"v_b1", flat(a.v_b1)}, {"m_w2", flat(a.m_w2)}, {"v_w2", flat(a.v_w2)}, {"m_b2", flat(a.m_b2)},
               {"v_b2", flat(a.v_b2)}};
  return j;
}

Classifier checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "lwbc-classifier")
      throw ValidationError("checkpoint: unexpected format tag");
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw ValidationError("checkpoint: unsupported version " + std::to_string(j.at("version").get<int>()));
    const auto d_in = j.at("d_in").get<Eigen::Index>();
    const auto d_hidden = j.at("d_hidden").get<Eigen::Index>();
    const auto classes = j.at("classes").get<Eigen::Index>();
    RngStream unused;
    Classifier c = init_classifier<double>(d_in, d_hidden, classes, unused);
    unflat(j, "w1", c.w1);
    unflat(j, "b1", c.b1);
    unflat(j, "w2", c.w2);
    unflat(j, "b2", c.b2);
    const auto& a = j.at("adam");
    c.adam.step = a.at("step").get<std::uint64_t>();
    unflat(a, "m_w1", c.adam.m_w1);
    unflat(a, "v_w1", c.adam.v_w1);
    unflat(a, "m_b1", c.adam.m_b1);
    unflat(a, "v_b1", c.adam.v_b1);
    unflat(a, "m_w2", c.adam.m_w2);
    unflat(a, "v_w2", c.adam.v_w2);
    unflat(a, "m_b2", c.adam.m_b2);
    unflat(a, "v_b2", c.adam.v_b2);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Classifier& c, const std::filesystem::path& path) {
  write_text_file(path, checkpoint_to_json(c).dump(1) + "\n");
}

Classifier load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_json(nlohmann::json::parse(read_text_file(path)));
}

}  // namespace lwbc
