#include "doctest.h"
#include "fd_oracle.hpp"
#include "trajguard/blackbox.hpp"
#include "trajguard/models.hpp"
#include "trajguard/remote.hpp"
#include "trajguard/toy_data.hpp"

using namespace trajguard;

TEST_CASE("tensor json") {
  Rng rng(1);
  const Tensor x = testing::uniform_tensor(rng, {2, 3, 4});
  CHECK(decode_tensor_json(encode_tensor_json(x)) == x);
  CHECK_THROWS_AS(decode_tensor_json("{\"shape\":[1,1,2],\"data\":[1]}"), ModelError);
  CHECK_THROWS_AS(decode_tensor_json("not json"), ModelError);
}

TEST_CASE("remote manipulator over loopback") {
  const Shape s{3, 16, 16};
  const std::shared_ptr<const Model> local =
      make_toy_manipulator(2, ManipulatorKind::attribute_editor, {.shape = s});
  ManipulatorServer server(local);
  const int port = server.start();
  REQUIRE(port > 0);
  const auto remote = std::make_shared<RemoteManipulator>("127.0.0.1", port);
  const Tensor x = make_toy_face(8, s);

  CHECK(remote->forward(x) == local->forward(x));
  CHECK(remote->name().find("remote:127.0.0.1") == 0);

  SUBCASE("black-box protection is identical through the adapter") {
    BlackBoxConfig cfg;
    cfg.iterations = 1;
    cfg.inject_steps = 2;
    cfg.nes.samples = 2;
    const auto sched = build_linear_schedule();
    const auto den = make_toy_denoiser(1, DenoiserKind::convolutional);
    const auto a = wrap_black_box(local);
    const auto b = wrap_black_box(remote);
    const auto ra = protect_blackbox(x, *a, *den, cfg, sched);
    const auto rb = protect_blackbox(x, *b, *den, cfg, sched);
    CHECK(ra.adversarial_image.data == rb.adversarial_image.data);
    CHECK(rb.queries == expected_blackbox_queries(cfg));
  }
  SUBCASE("server-side failure surfaces as a model error") {
    CHECK_THROWS_AS(remote->forward(Tensor(Shape{1, 2, 2})), ModelError);
  }
  server.stop();
  CHECK_THROWS_AS(remote->forward(x), ModelError);
  CHECK_THROWS_AS(RemoteManipulator("127.0.0.1", 0), ParameterError);
}
