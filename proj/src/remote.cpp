#include "trajguard/remote.hpp"

#include <thread>

#include "httplib.h"
#include "json.hpp"

namespace trajguard {

std::string encode_tensor_json(const Tensor& x) {
  nlohmann::json j;
  const Shape s = x.shape();
  j["shape"] = {s.channels, s.height, s.width};
  j["data"] = x.raw();
  return j.dump();
}

Tensor decode_tensor_json(const std::string& body) {
  try {
    const auto j = nlohmann::json::parse(body);
    const auto dims = j.at("shape").get<std::vector<int>>();
    if (dims.size() != 3) throw ModelError("tensor shape must have 3 entries");
    const Shape s{dims[0], dims[1], dims[2]};
    auto data = j.at("data").get<std::vector<double>>();
    if (data.size() != s.numel())
      throw ModelError("tensor data has " + std::to_string(data.size()) + " values, shape " +
                       s.str() + " needs " + std::to_string(s.numel()));
    return Tensor(s, std::move(data));
  } catch (const nlohmann::json::exception& e) {
    throw ModelError(std::string("malformed tensor JSON: ") + e.what());
  }
}

RemoteManipulator::RemoteManipulator(std::string host, int port, std::string path,
                                     double timeout_seconds)
    : host_(std::move(host)), port_(port), path_(std::move(path)), timeout_(timeout_seconds) {
  if (port_ < 1 || port_ > 65535) throw ParameterError("remote port out of range");
  if (!(timeout_ > 0)) throw ParameterError("remote timeout must be > 0");
}

Tensor RemoteManipulator::forward(const Tensor& x) const {
  httplib::Client client(host_, port_);
  const auto secs = static_cast<time_t>(timeout_);
  const auto usecs = static_cast<time_t>((timeout_ - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  const auto res = client.Post(path_, encode_tensor_json(x), "application/json");
  if (!res) throw ModelError("remote manipulator unreachable: " + httplib::to_string(res.error()));
  if (res->status != 200)
    throw ModelError("remote manipulator returned HTTP " + std::to_string(res->status));
  return decode_tensor_json(res->body);
}

std::string RemoteManipulator::name() const {
  return "remote:" + host_ + ":" + std::to_string(port_) + path_;
}

struct ManipulatorServer::Impl {
  std::shared_ptr<const Model> model;
  std::string path;
  httplib::Server server;
  std::thread thread;
};

ManipulatorServer::ManipulatorServer(std::shared_ptr<const Model> model, std::string path)
    : impl_(std::make_unique<Impl>()) {
  impl_->model = std::move(model);
  impl_->path = std::move(path);
  impl_->server.Post(impl_->path, [this](const httplib::Request& req, httplib::Response& res) {
    try {
      const Tensor out = impl_->model->forward(decode_tensor_json(req.body));
      res.set_content(encode_tensor_json(out), "application/json");
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(e.what(), "text/plain");
    }
  });
}

ManipulatorServer::~ManipulatorServer() { stop(); }

int ManipulatorServer::start(const std::string& host, int port) {
  if (impl_->thread.joinable()) throw ParameterError("server already running");
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host)
                              : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound <= 0) throw ModelError("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void ManipulatorServer::stop() {
  if (!impl_ || !impl_->thread.joinable()) return;
  impl_->server.stop();
  impl_->thread.join();
}

}  // namespace trajguard
