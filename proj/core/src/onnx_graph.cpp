#include <fmt/format.h>

#include "maskdef/errors.hpp"
#include "maskdef/graph.hpp"

#ifdef MASKDEF_WITH_ONNXRUNTIME
#include <onnxruntime_cxx_api.h>
#endif

namespace maskdef {

#ifdef MASKDEF_WITH_ONNXRUNTIME

namespace {

Ort::Env& ort_env() {
  static Ort::Env env(ORT_LOGGING_LEVEL_WARNING, "maskdef");
  return env;
}

class OrtGraph final : public InferenceGraph {
 public:
  OrtGraph(const std::string& path, std::string output) : output_(std::move(output)) {
    Ort::SessionOptions opts;
    opts.SetIntraOpNumThreads(1);
    opts.SetInterOpNumThreads(1);
    opts.SetExecutionMode(ExecutionMode::ORT_SEQUENTIAL);
    try {
      session_ = std::make_unique<Ort::Session>(ort_env(), path.c_str(), opts);
    } catch (const Ort::Exception& e) {
      throw DataError(fmt::format("cannot load graph '{}': {}", path, e.what()));
    }
    Ort::AllocatorWithDefaultOptions alloc;
    bool has_ids = false;
    bool has_mask = false;
    for (std::size_t i = 0; i < session_->GetInputCount(); ++i) {
      std::string name = session_->GetInputNameAllocated(i, alloc).get();
      has_ids |= name == "input_ids";
      has_mask |= name == "attention_mask";
      has_token_types_ |= name == "token_type_ids";
    }
    if (!has_ids) throw DataError(fmt::format("graph '{}' has no input named input_ids", path));
    if (!has_mask) throw DataError(fmt::format("graph '{}' has no input named attention_mask", path));
    bool has_output = false;
    for (std::size_t i = 0; i < session_->GetOutputCount(); ++i) {
      has_output |= output_ == session_->GetOutputNameAllocated(i, alloc).get();
    }
    if (!has_output) {
      throw DataError(fmt::format("graph '{}' has no output named {}", path, output_));
    }
  }

  GraphTensor run(std::span<const std::int64_t> input_ids,
                  std::span<const std::int64_t> attention_mask) const override {
    auto mem = Ort::MemoryInfo::CreateCpu(OrtArenaAllocator, OrtMemTypeDefault);
    const std::int64_t n = static_cast<std::int64_t>(input_ids.size());
    const std::array<std::int64_t, 2> shape{1, n};
    std::vector<std::int64_t> ids(input_ids.begin(), input_ids.end());
    std::vector<std::int64_t> mask(attention_mask.begin(), attention_mask.end());
    std::vector<std::int64_t> types(ids.size(), 0);
    std::vector<Ort::Value> inputs;
    std::vector<const char*> names = {"input_ids", "attention_mask"};
    inputs.push_back(Ort::Value::CreateTensor<std::int64_t>(mem, ids.data(), ids.size(),
                                                            shape.data(), shape.size()));
    inputs.push_back(Ort::Value::CreateTensor<std::int64_t>(mem, mask.data(), mask.size(),
                                                            shape.data(), shape.size()));
    if (has_token_types_) {
      names.push_back("token_type_ids");
      inputs.push_back(Ort::Value::CreateTensor<std::int64_t>(mem, types.data(), types.size(),
                                                              shape.data(), shape.size()));
    }
    const char* out_name = output_.c_str();
    auto outputs = session_->Run(Ort::RunOptions{nullptr}, names.data(), inputs.data(),
                                 inputs.size(), &out_name, 1);
    auto info = outputs[0].GetTensorTypeAndShapeInfo();
    GraphTensor t;
    t.shape = info.GetShape();
    const float* data = outputs[0].GetTensorData<float>();
    t.data.assign(data, data + info.GetElementCount());
    return t;
  }

 private:
  std::string output_;
  std::unique_ptr<Ort::Session> session_;
  bool has_token_types_ = false;
};

}  // namespace

bool onnx_runtime_available() { return true; }

std::unique_ptr<InferenceGraph> open_onnx_graph(const std::string& path,
                                                const std::string& output_name) {
  return std::make_unique<OrtGraph>(path, output_name);
}

#else

bool onnx_runtime_available() { return false; }

std::unique_ptr<InferenceGraph> open_onnx_graph(const std::string& path,
                                                const std::string&) {
  throw DataError(fmt::format(
      "cannot open graph '{}': maskdef was built without ONNX Runtime support", path));
}

#endif

}  // namespace maskdef
