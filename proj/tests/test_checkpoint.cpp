#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "sfusnet/checkpoint.hpp"

using namespace sfus;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("checkpoint");

namespace {

ModelConfig tiny_config() {
  ModelConfig mc;
  mc.base_channels = 4;
  mc.stage_depths = {1, 1, 1, 1};
  mc.num_classes = 4;
  mc.input_size = 16;
  mc.dropblock_drop_rate = 0;
  return mc;
}

std::string temp_file(const char* tag) {
  return (fs::temp_directory_path() / (std::string("sfusnet_ckpt_") + tag + ".ckpt")).string();
}

}  // namespace

TEST_CASE("save/load round trip is bitwise for f64") {
  ModelConfig mc = tiny_config();
  SfusNet<> net = build_model<>(mc, 77);
  net.set_mode(Mode::kTrain);
  Rng rng(1);
  net.forward(Tensor<>::randn({2, 3, 16, 16}, rng));  // move BN stats off init

  CheckpointAdam<double> adam;
  for (auto& p : net.parameters()) {
    AdamState<double> st = AdamState<double>::fresh(p.tensor->numel());
    for (index_t i = 0; i < st.m.size(); ++i) st.m[i] = rng.normal();
    st.t = 3;
    adam.states.emplace(p.name, std::move(st));
  }

  const std::string path = temp_file("roundtrip");
  save_checkpoint(path, net, nlohmann::json{{"fold", 2}, {"note", "test"}}, &adam);
  LoadedCheckpoint<> back = load_checkpoint<>(path);

  CHECK(back.meta.at("fold") == 2);
  CHECK(back.model.config.base_channels == 4);
  auto pa = net.parameters();
  auto pb = back.model.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK((pa[i].tensor->array() == pb[i].tensor->array()).all());
  }
  auto ba = net.batchnorms();
  auto bb = back.model.batchnorms();
  for (std::size_t i = 0; i < ba.size(); ++i) {
    CHECK((ba[i].layer->stats.mean == bb[i].layer->stats.mean).all());
    CHECK((ba[i].layer->stats.var == bb[i].layer->stats.var).all());
    CHECK(ba[i].layer->stats.tracked == bb[i].layer->stats.tracked);
  }
  REQUIRE(back.has_adam);
  for (auto& [name, st] : adam.states) {
    CHECK((back.adam.states.at(name).m == st.m).all());
    CHECK(back.adam.states.at(name).t == st.t);
  }
  fs::remove(path);
}

TEST_CASE("f32 models round trip exactly through the f64 payload") {
  ModelConfig mc = tiny_config();
  SfusNet<float> net = build_model<float>(mc, 9);
  const std::string path = temp_file("f32");
  save_checkpoint(path, net, nlohmann::json::object());
  LoadedCheckpoint<float> back = load_checkpoint<float>(path);
  auto pa = net.parameters();
  auto pb = back.model.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    CHECK((pa[i].tensor->array() == pb[i].tensor->array()).all());
  fs::remove(path);
}

TEST_CASE("loaded model reproduces eval outputs bitwise") {
  ModelConfig mc = tiny_config();
  SfusNet<> net = build_model<>(mc, 31);
  Rng rng(4);
  Tensor<> x = Tensor<>::randn({2, 3, 16, 16}, rng);
  net.set_mode(Mode::kTrain);
  net.forward(x);
  const std::string path = temp_file("eval");
  save_checkpoint(path, net, nlohmann::json::object());
  LoadedCheckpoint<> back = load_checkpoint<>(path);
  NoGradGuard guard;
  net.set_mode(Mode::kEval);
  back.model.set_mode(Mode::kEval);
  CHECK((net.forward(x).array() == back.model.forward(x).array()).all());
  fs::remove(path);
}

TEST_CASE("bad magic, version and truncation are rejected") {
  ModelConfig mc = tiny_config();
  SfusNet<> net = build_model<>(mc, 5);
  const std::string path = temp_file("corrupt");
  save_checkpoint(path, net, nlohmann::json::object());

  std::vector<char> bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  auto write_bytes = [&](const std::vector<char>& b) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
  };

  std::vector<char> bad_magic = bytes;
  bad_magic[0] = 'X';
  write_bytes(bad_magic);
  CHECK_THROWS_AS(load_checkpoint<>(path), DataError);

  std::vector<char> bad_version = bytes;
  bad_version[8] = 42;
  write_bytes(bad_version);
  CHECK_THROWS_AS(load_checkpoint<>(path), DataError);

  std::vector<char> truncated(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(bytes.size() / 2));
  write_bytes(truncated);
  CHECK_THROWS_AS(load_checkpoint<>(path), Error);

  fs::remove(path);
}

TEST_SUITE_END();
