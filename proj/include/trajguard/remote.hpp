#pragma once

#include <memory>
#include <string>

#include "trajguard/model.hpp"

namespace trajguard {

// Request/response contract of a remote manipulator endpoint:
//   POST <path>, Content-Type application/json
//   request  {"shape": [c, h, w], "data": [c*h*w numbers, CHW order, values in [-1, 1]]}
//   response {"shape": [c', h', w'], "data": [...]} with status 200
// Any other status or a malformed body raises ModelError.
class RemoteManipulator final : public Model {
 public:
  RemoteManipulator(std::string host, int port, std::string path = "/manipulate",
                    double timeout_seconds = 30.0);
  Tensor forward(const Tensor& x) const override;
  std::string name() const override;

 private:
  std::string host_;
  int port_;
  std::string path_;
  double timeout_;
};

// Serves a model under the contract above on a background thread.
class ManipulatorServer {
 public:
  explicit ManipulatorServer(std::shared_ptr<const Model> model,
                             std::string path = "/manipulate");
  ~ManipulatorServer();
  ManipulatorServer(const ManipulatorServer&) = delete;
  ManipulatorServer& operator=(const ManipulatorServer&) = delete;

  // Binds host:port (port 0 picks a free one) and returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::string encode_tensor_json(const Tensor& x);
Tensor decode_tensor_json(const std::string& body);

}  // namespace trajguard
