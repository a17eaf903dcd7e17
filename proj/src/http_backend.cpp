#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <cstdlib>

#include <nlohmann/json.hpp>

#include "mixrag/errors.hpp"
#include "mixrag/prompt.hpp"

namespace mixrag {

namespace {

std::string priority_line(const PromptBundle& bundle) {
  if (bundle.gate_weights.empty()) return {};
  auto ranked = bundle.gate_weights;
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::string line = "Evidence priority:";
  char buf[32];
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.3f", ranked[i].second);
    line += (i == 0 ? " " : ", ") + ranked[i].first + " (" + buf + ")";
  }
  return line;
}

}  // namespace

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
  const auto& url = config_.endpoint;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ParameterError("llm.endpoint must be an http(s) URL: '" + url + "'");
  const auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") throw ParameterError("llm.endpoint: unsupported scheme '" + scheme + "'");
  const auto path_start = url.find('/', scheme_end + 3);
  base_ = url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
  if (!config_.api_key) {
    if (const char* key = std::getenv("MIXRAG_LLM_API_KEY")) config_.api_key = key;
  }
}

std::string HttpBackend::request_body(const PromptBundle& bundle) const {
  std::string user = bundle.evidence_text + "\n" + bundle.query;
  if (auto pre = priority_line(bundle); !pre.empty()) user = pre + "\n" + user;
  nlohmann::json body = {
      {"model", config_.model},
      {"messages",
       nlohmann::json::array({{{"role", "system"}, {"content", bundle.task_instruction}},
                              {{"role", "user"}, {"content", user}}})},
      {"temperature", 0},
  };
  return body.dump();
}

std::string HttpBackend::parse_response(std::string_view body) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw ProtocolError(std::string("chat response is not JSON: ") + e.what());
  }
  try {
    const auto& content = doc.at("choices").at(0).at("message").at("content");
    if (!content.is_string()) throw ProtocolError("chat response: choices[0].message.content is not a string");
    auto text = content.get<std::string>();
    if (text.empty()) throw ProtocolError("chat response: empty content");
    return text;
  } catch (const nlohmann::json::exception&) {
    throw ProtocolError("chat response lacks choices[0].message.content");
  }
}

Answer HttpBackend::generate(const PromptBundle& bundle) const {
  httplib::Client client(base_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  httplib::Headers headers;
  if (config_.api_key) headers.emplace("Authorization", "Bearer " + *config_.api_key);

  const auto start = std::chrono::steady_clock::now();
  auto res = client.Post(path_, headers, request_body(bundle), "application/json");
  const auto elapsed = std::chrono::steady_clock::now() - start;
  const double ms = std::chrono::duration<double, std::milli>(elapsed).count();

  if (!res) {
    const auto err = res.error();
    if ((err == httplib::Error::Read || err == httplib::Error::Connection || err == httplib::Error::Write) &&
        elapsed >= config_.timeout) {
      throw TimeoutError("chat request to " + config_.endpoint + " timed out after " +
                         std::to_string(config_.timeout.count()) + " ms");
    }
    throw TransportError("chat request to " + config_.endpoint + " failed: " + httplib::to_string(err), 0);
  }
  if (res->status < 200 || res->status >= 300) {
    throw TransportError("chat request to " + config_.endpoint + " returned HTTP " + std::to_string(res->status),
                         res->status);
  }
  Answer a;
  a.text = parse_response(res->body);
  a.raw = res->body;
  a.latency_ms = ms;
  return a;
}

}  // namespace mixrag
