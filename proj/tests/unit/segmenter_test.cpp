// Copyright 2026 The Diptych Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include "diptych/segmenter.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <thread>

#include "diptych/error.hpp"
#include "diptych/sprites.hpp"
#include "httplib.h"
#include "json.hpp"

#ifndef DIPTYCH_FIXTURE_DIR
#error "DIPTYCH_FIXTURE_DIR must point at tests/fixtures"
#endif

namespace diptych {
namespace {

const std::string kFixtures = std::string(DIPTYCH_FIXTURE_DIR) + "/segmenter";

sprites::Rendered random_sprite(SeededRng& rng) {
  const sprites::Scene s{{rng.below(3), rng.below(4), rng.below(2)}, rng.below(sprites::contexts().size()), sprites::random_layout(rng, 32)};
  return sprites::render(s, 32);
}

void expect_consistent(const ToyImage& image, const SegmentationResult& r, const Rgb& fill) {
  for (std::size_t y = 0; y < image.height(); ++y) {
    for (std::size_t x = 0; x < image.width(); ++x) {
      if (r.mask.at(y, x)) {
        EXPECT_TRUE(r.box.contains(y, x));
        EXPECT_EQ(r.segmented.pixel(y, x), image.pixel(y, x));
      } else {
        EXPECT_EQ(r.segmented.pixel(y, x), fill);
      }
    }
  }
}

TEST(ToySegmenter, RecoversExactSpriteSupport) {
  SeededRng rng(21);
  std::size_t exact = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const auto r = random_sprite(rng);
    const auto seg = segment_subject(r.image, "sprite");
    exact += seg.mask == r.mask;
    expect_consistent(r.image, seg, sprites::kWhite);
  }
  EXPECT_EQ(exact, 60u);
}

TEST(ToySegmenter, MeanIouOver200SpritesAtLeast095) {
  SeededRng rng(22);
  double total = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto r = random_sprite(rng);
    total += mask_iou(segment_subject(r.image, "sprite").mask, r.mask);
  }
  EXPECT_GE(total / 200.0, 0.95);
}

TEST(ToySegmenter, Idempotent) {
  SeededRng rng(23);
  for (int trial = 0; trial < 30; ++trial) {
    const auto r = random_sprite(rng);
    const auto once = segment_subject(r.image, "sprite");
    const auto twice = segment_subject(once.segmented, "sprite");
    EXPECT_EQ(twice.mask, once.mask);
    EXPECT_EQ(twice.segmented, once.segmented);
  }
}

TEST(ToySegmenter, UniformSubjectColorIsAllSubject) {
  const ToyImage red(32, 32, sprites::colors()[0].rgb);
  const auto seg = segment_subject(red, "solid red circle");
  EXPECT_EQ(seg.mask.count(), 32u * 32u);
  EXPECT_EQ(seg.segmented, red);
  EXPECT_EQ(seg.box, (Box{0, 0, 32, 32}));
}

TEST(ToySegmenter, BlankImageIsEmptyDetection) {
  EXPECT_THROW(segment_subject(ToyImage(32, 32, sprites::kWhite), "solid red circle"), EmptyDetectionError);
  EXPECT_THROW(segment_subject(ToyImage(32, 32, sprites::contexts()[0].rgb), "circle"), EmptyDetectionError);
}

TEST(ToySegmenter, TieBreaksTowardsNamedColor) {
  ToyImage img(16, 16, sprites::kWhite);
  for (std::size_t y = 2; y < 6; ++y) {
    for (std::size_t x = 2; x < 6; ++x) {
      img.set_pixel(y, x, sprites::colors()[0].rgb);       // red block
      img.set_pixel(y + 8, x + 8, sprites::colors()[2].rgb);  // blue block, same size
    }
  }
  const auto red = segment_subject(img, "red square");
  const auto blue = segment_subject(img, "blue square");
  EXPECT_EQ(red.mask.at(3, 3), 1);
  EXPECT_EQ(red.mask.at(11, 11), 0);
  EXPECT_EQ(blue.mask.at(11, 11), 1);
  EXPECT_EQ(blue.mask.at(3, 3), 0);
  // Without a color word the raster-first component wins.
  EXPECT_EQ(segment_subject(img, "square").mask.at(3, 3), 1);
}

TEST(ToySegmenter, CustomFill) {
  SeededRng rng(24);
  const auto r = random_sprite(rng);
  ToySegmenterOptions o;
  o.fill = {0.0, 0.0, 0.0};
  expect_consistent(r.image, segment_subject(r.image, "sprite", o), o.fill);
}

TEST(Base64, RoundTripAndErrors) {
  SeededRng rng(25);
  for (std::size_t n = 0; n < 40; ++n) {
    std::vector<std::uint8_t> bytes(n);
    for (auto& b : bytes) b = static_cast<std::uint8_t>(rng.below(256));
    EXPECT_EQ(base64_decode(base64_encode(bytes)), bytes);
  }
  EXPECT_EQ(base64_encode(std::vector<std::uint8_t>{'M', 'a', 'n'}), "TWFu");
  EXPECT_EQ(base64_encode(std::vector<std::uint8_t>{'M', 'a'}), "TWE=");
  EXPECT_THROW(base64_decode("abc"), ProtocolError);
  EXPECT_THROW(base64_decode("%%%%"), ProtocolError);
}

// Serves one fixture file: {"status": int, "subject": str, "body": json}.
class FixtureServer {
 public:
  explicit FixtureServer(const std::string& fixture) {
    std::ifstream in(kFixtures + "/" + fixture);
    const nlohmann::json f = nlohmann::json::parse(in);
    status_ = f["status"];
    subject_ = f["subject"];
    body_ = f["body"].dump();
    server_.Post("/segment", [this](const httplib::Request& req, httplib::Response& res) {
      ++hits_;
      const auto j = nlohmann::json::parse(req.body);
      if (j.value("subject", "") != subject_ || !j.contains("image")) {
        res.status = 400;
        return;
      }
      request_image_ = j["image"].get<std::string>();
      res.status = status_;
      res.set_content(body_, "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FixtureServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/segment"; }
  int hits() const { return hits_; }
  const std::string& request_image() const { return request_image_; }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  int status_ = 200;
  std::string subject_, body_, request_image_;
  std::atomic<int> hits_{0};
};

RemoteOptions fast_options() {
  RemoteOptions o;
  o.retries = 3;
  o.backoff = std::chrono::milliseconds(1);
  o.timeout = std::chrono::milliseconds(2000);
  return o;
}

TEST(RemoteSegmenter, FixtureMaskIsReturned) {
  FixtureServer server("ok.json");
  const ToyImage image = read_png(kFixtures + "/request_image.png");
  const auto r = remote_segment(server.url(), image, "solid red circle", fast_options());
  const auto fixture = nlohmann::json::parse(std::ifstream(kFixtures + "/ok.json"));
  const BinaryMask expected = decode_png_mask(base64_decode(fixture["body"]["mask"].get<std::string>()));
  EXPECT_EQ(r.mask, expected);
  const auto& b = fixture["body"]["box"];
  EXPECT_EQ(r.box, (Box{b[0], b[1], b[2], b[3]}));
  expect_consistent(image, r, sprites::kWhite);
  EXPECT_EQ(server.hits(), 1);
  EXPECT_EQ(decode_png_rgb(base64_decode(server.request_image())), quantized(image));
  // Same downstream semantics as the toy segmenter on this sprite.
  const auto toy = segment_subject(image, "solid red circle");
  EXPECT_EQ(toy.mask, r.mask);
  EXPECT_EQ(toy.segmented, r.segmented);
}

TEST(RemoteSegmenter, ServerErrorIsNetworkErrorAfterRetries) {
  FixtureServer server("server_error.json");
  const ToyImage image = read_png(kFixtures + "/request_image.png");
  EXPECT_THROW(remote_segment(server.url(), image, "solid red circle", fast_options()), NetworkError);
  EXPECT_EQ(server.hits(), 3);
}

TEST(RemoteSegmenter, BoxOutsideImageIsProtocolError) {
  FixtureServer server("box_out_of_bounds.json");
  const ToyImage image = read_png(kFixtures + "/request_image.png");
  EXPECT_THROW(remote_segment(server.url(), image, "solid red circle", fast_options()), ProtocolError);
  EXPECT_EQ(server.hits(), 3);
}

TEST(RemoteSegmenter, UndecodableMaskIsProtocolError) {
  FixtureServer server("bad_mask.json");
  const ToyImage image = read_png(kFixtures + "/request_image.png");
  EXPECT_THROW(remote_segment(server.url(), image, "solid red circle", fast_options()), ProtocolError);
}

TEST(RemoteSegmenter, UnreachableEndpointIsNetworkError) {
  int port = 0;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  auto o = fast_options();
  o.retries = 2;
  o.timeout = std::chrono::milliseconds(200);
  EXPECT_THROW(remote_segment("http://127.0.0.1:" + std::to_string(port) + "/segment", ToyImage(4, 4), "x", o),
               NetworkError);
}

TEST(RemoteSegmenter, ConcurrentCallsAgree) {
  FixtureServer server("ok.json");
  const ToyImage image = read_png(kFixtures + "/request_image.png");
  const RemoteSegmenter seg(server.url(), fast_options());
  std::vector<SegmentationResult> out(4);
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < out.size(); ++i) {
    threads.emplace_back([&, i] { out[i] = seg.segment(image, "solid red circle"); });
  }
  for (auto& t : threads) t.join();
  for (const auto& r : out) EXPECT_EQ(r.mask, out[0].mask);
}

TEST(DefaultSegmenter, HonoursEndpointVariable) {
  unsetenv(kSegmenterEndpointEnv);
  EXPECT_NE(dynamic_cast<ToySegmenter*>(make_default_segmenter().get()), nullptr);
  setenv(kSegmenterEndpointEnv, "http://127.0.0.1:1/segment", 1);
  EXPECT_NE(dynamic_cast<RemoteSegmenter*>(make_default_segmenter().get()), nullptr);
  unsetenv(kSegmenterEndpointEnv);
}

}  // namespace
}  // namespace diptych
