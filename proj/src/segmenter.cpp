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

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <optional>
#include <thread>

#include "diptych/caption.hpp"
#include "diptych/error.hpp"
#include "diptych/sprites.hpp"
#include "httplib.h"
#include "json.hpp"

namespace diptych {
namespace {

double distance(const Rgb& a, const Rgb& b) {
  const double d0 = a[0] - b[0], d1 = a[1] - b[1], d2 = a[2] - b[2];
  return std::sqrt(d0 * d0 + d1 * d1 + d2 * d2);
}

// Distance from a color to a named sprite color, counting both the base
// shade and the dark stripe shade as members of the family.
double family_distance(const Rgb& c, std::size_t color) {
  const Rgb base = sprites::colors()[color].rgb;
  const Rgb dark = {base[0] * sprites::kStripeShade, base[1] * sprites::kStripeShade,
                    base[2] * sprites::kStripeShade};
  return std::min(distance(c, base), distance(c, dark));
}

std::optional<std::size_t> named_color(std::string_view subject_name) {
  for (const std::string& w : Tokenizer::split_words(subject_name)) {
    if (auto c = sprites::find_color(w)) return c;
  }
  return std::nullopt;
}

Rgb estimate_background(const ToyImage& image, int levels) {
  std::map<std::array<int, 3>, std::pair<std::size_t, Rgb>> bins;
  const auto add = [&](std::size_t y, std::size_t x) {
    const Rgb p = image.pixel(y, x);
    std::array<int, 3> key{};
    for (int c = 0; c < 3; ++c) {
      key[c] = std::clamp(static_cast<int>(p[c] * levels), 0, levels - 1);
    }
    auto& bin = bins[key];
    ++bin.first;
    for (int c = 0; c < 3; ++c) bin.second[c] += p[c];
  };
  const std::size_t h = image.height(), w = image.width();
  for (std::size_t x = 0; x < w; ++x) {
    add(0, x);
    if (h > 1) add(h - 1, x);
  }
  for (std::size_t y = 1; y + 1 < h; ++y) {
    add(y, 0);
    if (w > 1) add(y, w - 1);
  }
  // std::map iterates keys in order, so ties resolve to the smallest key.
  const auto best = std::max_element(bins.begin(), bins.end(), [](const auto& a, const auto& b) {
    return a.second.first < b.second.first;
  });
  const double n = static_cast<double>(best->second.first);
  return {best->second.second[0] / n, best->second.second[1] / n, best->second.second[2] / n};
}

}  // namespace

SegmentationResult make_result(const ToyImage& image, BinaryMask mask, const Box& box, const Rgb& fill) {
  if (mask.height != image.height() || mask.width != image.width()) {
    throw ShapeError("segmentation mask does not match the image size");
  }
  SegmentationResult r{std::move(mask), box, ToyImage(image.height(), image.width(), fill)};
  for (std::size_t y = 0; y < image.height(); ++y) {
    for (std::size_t x = 0; x < image.width(); ++x) {
      if (r.mask.at(y, x)) r.segmented.set_pixel(y, x, image.pixel(y, x));
    }
  }
  return r;
}

SegmentationResult ToySegmenter::segment(const ToyImage& image, std::string_view subject_name) const {
  if (image.empty()) throw ShapeError("segment_subject: empty image");
  const std::size_t h = image.height(), w = image.width();
  const Rgb background = estimate_background(image, options_.border_levels);
  const std::optional<std::size_t> family = named_color(subject_name);

  std::vector<std::uint8_t> fg(h * w, 0);
  bool any = false;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (distance(image.pixel(y, x), background) > options_.threshold) {
        fg[y * w + x] = 1;
        any = true;
      }
    }
  }

  if (!any) {
    if (family && family_distance(background, *family) <= options_.threshold) {
      return make_result(image, BinaryMask(h, w, 1), Box{0, 0, h, w}, options_.fill);
    }
    throw EmptyDetectionError("no subject found for '" + std::string(subject_name) + "'");
  }

  // Label 4-connected components in raster order.
  std::vector<int> label(h * w, -1);
  struct Component {
    std::size_t size = 0;
    Rgb sum{0.0, 0.0, 0.0};
  };
  std::vector<Component> comps;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < h * w; ++start) {
    if (!fg[start] || label[start] >= 0) continue;
    const int id = static_cast<int>(comps.size());
    comps.emplace_back();
    label[start] = id;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t idx = stack.back();
      stack.pop_back();
      const std::size_t y = idx / w, x = idx % w;
      Component& c = comps.back();
      ++c.size;
      const Rgb p = image.pixel(y, x);
      for (int k = 0; k < 3; ++k) c.sum[k] += p[k];
      const auto visit = [&](std::size_t n) {
        if (fg[n] && label[n] < 0) {
          label[n] = id;
          stack.push_back(n);
        }
      };
      if (y > 0) visit(idx - w);
      if (y + 1 < h) visit(idx + w);
      if (x > 0) visit(idx - 1);
      if (x + 1 < w) visit(idx + 1);
    }
  }

  std::size_t best = 0;
  for (std::size_t i = 1; i < comps.size(); ++i) {
    if (comps[i].size > comps[best].size) {
      best = i;
    } else if (comps[i].size == comps[best].size && family) {
      const auto mean = [](const Component& c) {
        const double n = static_cast<double>(c.size);
        return Rgb{c.sum[0] / n, c.sum[1] / n, c.sum[2] / n};
      };
      if (family_distance(mean(comps[i]), *family) < family_distance(mean(comps[best]), *family)) best = i;
    }
  }

  BinaryMask mask(h, w);
  Box box{h, w, 0, 0};
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (label[y * w + x] != static_cast<int>(best)) continue;
      mask.at(y, x) = 1;
      box.top = std::min(box.top, y);
      box.left = std::min(box.left, x);
      box.bottom = std::max(box.bottom, y + 1);
      box.right = std::max(box.right, x + 1);
    }
  }
  return make_result(image, std::move(mask), box, options_.fill);
}

SegmentationResult segment_subject(const ToyImage& image, std::string_view subject_name,
                                   const ToySegmenterOptions& options) {
  return ToySegmenter(options).segment(image, subject_name);
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw ProtocolError("base64 payload length is not a multiple of 4");
  std::vector<std::uint8_t> out(3 * (text.size() / 4));
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw ProtocolError("invalid base64 payload");
  std::size_t len = static_cast<std::size_t>(n);
  if (!text.empty() && text.back() == '=') --len;
  if (text.size() >= 2 && text[text.size() - 2] == '=') --len;
  out.resize(len);
  return out;
}

namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Endpoint parse_endpoint(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw ConfigError("segmenter endpoint must be an http URL: " + url);
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

SegmentationResult parse_response(const std::string& body, const ToyImage& image, const Rgb& fill) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("segmenter response is not JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("box") || !j.contains("mask")) {
    throw ProtocolError("segmenter response lacks 'box' or 'mask'");
  }
  const auto& jb = j["box"];
  if (!jb.is_array() || jb.size() != 4 || !std::all_of(jb.begin(), jb.end(), [](const auto& v) {
        return v.is_number_integer();
      })) {
    throw ProtocolError("segmenter 'box' must be four integers [top, left, bottom, right]");
  }
  const long long t = jb[0], l = jb[1], b = jb[2], r = jb[3];
  const auto h = static_cast<long long>(image.height()), w = static_cast<long long>(image.width());
  if (t < 0 || l < 0 || b > h || r > w || t >= b || l >= r) {
    throw ProtocolError("segmenter box lies outside the image or is empty");
  }
  if (!j["mask"].is_string()) throw ProtocolError("segmenter 'mask' must be a base64 string");
  BinaryMask mask;
  try {
    mask = decode_png_mask(base64_decode(j["mask"].get<std::string>()));
  } catch (const IoError& e) {
    throw ProtocolError(std::string("segmenter mask is not a PNG: ") + e.what());
  }
  if (mask.height != image.height() || mask.width != image.width()) {
    throw ProtocolError("segmenter mask size does not match the image");
  }
  const Box box{static_cast<std::size_t>(t), static_cast<std::size_t>(l), static_cast<std::size_t>(b),
                static_cast<std::size_t>(r)};
  for (std::size_t y = 0; y < mask.height; ++y) {
    for (std::size_t x = 0; x < mask.width; ++x) {
      if (mask.at(y, x) && !box.contains(y, x)) throw ProtocolError("segmenter mask extends outside its box");
    }
  }
  if (mask.count() == 0) throw EmptyDetectionError("remote segmenter returned an empty mask");
  return make_result(image, std::move(mask), box, fill);
}

}  // namespace

SegmentationResult remote_segment(const std::string& endpoint, const ToyImage& image,
                                  std::string_view subject_name, const RemoteOptions& options) {
  const Endpoint ep = parse_endpoint(endpoint);
  const nlohmann::json request = {{"image", base64_encode(encode_png(image))},
                                  {"subject", std::string(subject_name)}};
  const std::string payload = request.dump();
  const int attempts = std::max(1, options.retries);
  auto backoff = options.backoff;
  std::string last_error;
  bool last_was_protocol = false;
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
    httplib::Client client(ep.origin);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(options.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(options.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    auto res = client.Post(ep.path, payload, "application/json");
    if (!res) {
      last_error = "transport failure: " + httplib::to_string(res.error());
      last_was_protocol = false;
      continue;
    }
    if (res->status >= 500) {
      last_error = "server returned HTTP " + std::to_string(res->status);
      last_was_protocol = false;
      continue;
    }
    if (res->status != 200) {
      last_error = "unexpected HTTP " + std::to_string(res->status);
      last_was_protocol = true;
      continue;
    }
    try {
      return parse_response(res->body, image, options.fill);
    } catch (const ProtocolError& e) {
      last_error = e.what();
      last_was_protocol = true;
    }
  }
  const std::string msg = "remote segmenter failed after " + std::to_string(attempts) + " attempts: " + last_error;
  if (last_was_protocol) throw ProtocolError(msg);
  throw NetworkError(msg);
}

std::unique_ptr<Segmenter> make_default_segmenter(const Rgb& fill) {
  if (const char* url = std::getenv(kSegmenterEndpointEnv); url != nullptr && *url != '\0') {
    RemoteOptions o;
    o.fill = fill;
    return std::make_unique<RemoteSegmenter>(url, o);
  }
  ToySegmenterOptions o;
  o.fill = fill;
  return std::make_unique<ToySegmenter>(o);
}

}  // namespace diptych
