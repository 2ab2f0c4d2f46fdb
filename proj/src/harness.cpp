// Copyright 2026 The Assured Update Authors
//
// Licensed under the Apache License, Version 2.0 (the "License"); you may not
// use this file except in compliance with the License. You may obtain a copy of
// the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
// WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied. See the
// License for the specific language governing permissions and limitations under
// the License.

#include "assured/harness.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>

#include <json.hpp>

#include "assured/controller.hpp"
#include "assured/transport.hpp"

namespace assured::harness {

using controller::Controller;
using metadata::Encoding;
using metadata::RoleKind;
using protocol::Request;

namespace {

std::vector<std::string> split_words(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    auto start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.emplace_back(line.substr(start, i - start));
  }
  return out;
}

std::string short_hash(ByteView b) { return to_hex(crypto::hash(b).bytes).substr(0, 8); }

std::string request_name(std::uint8_t type, bool repository) {
  if (repository) {
    switch (static_cast<transport::RepoRequest>(type)) {
      case transport::RepoRequest::Encoding: return "Encoding";
      case transport::RepoRequest::FetchMetadata: return "FetchMetadata";
      case transport::RepoRequest::FetchEnvelope: return "FetchEnvelope";
      case transport::RepoRequest::Publish: return "Publish";
      case transport::RepoRequest::Tamper: return "Tamper";
      case transport::RepoRequest::AdvanceClock: return "AdvanceClock";
      case transport::RepoRequest::Refresh: return "Refresh";
      case transport::RepoRequest::Shutdown: return "Shutdown";
    }
    return "Unknown";
  }
  switch (static_cast<Request>(type)) {
    case Request::Hello: return "Hello";
    case Request::Confirm: return "Confirm";
    case Request::Update: return "Update";
    case Request::PlainUpdate: return "PlainUpdate";
    case Request::Attest: return "Attest";
    case Request::Boot: return "Boot";
    case Request::TufUpdate: return "TufUpdate";
    case Request::Provision: return "Provision";
    case Request::CorruptFlash: return "CorruptFlash";
    case Request::Shutdown: return "Shutdown";
  }
  return "Unknown";
}

/// Writes one transcript line per message in each direction.
class RecordingLink : public protocol::DeviceLink {
 public:
  RecordingLink(std::string label, bool repository, protocol::DeviceLink& inner,
                std::vector<std::string>& lines)
      : label_(std::move(label)), repository_(repository), inner_(&inner), lines_(&lines) {}

  std::optional<Bytes> exchange(ByteView request) override {
    std::string name = request.empty() ? "Empty" : request_name(request[0], repository_);
    lines_->push_back("  > " + label_ + " " + name + " " + std::to_string(request.size()) + "B #" +
                      short_hash(request));
    auto reply = inner_->exchange(request);
    if (!reply) {
      lines_->push_back("  < " + label_ + " (no reply)");
    } else {
      std::string status = !reply->empty() && (*reply)[0] == protocol::kOk ? "ok" : "error";
      lines_->push_back("  < " + label_ + " " + status + " " + std::to_string(reply->size()) +
                        "B #" + short_hash(*reply));
    }
    return reply;
  }

 private:
  std::string label_;
  bool repository_;
  protocol::DeviceLink* inner_;
  std::vector<std::string>* lines_;
};

crypto::Drbg labeled(std::uint64_t seed, const std::string& label) {
  return crypto::Drbg::from_seed(seed, label);
}

struct Keyring {
  std::vector<crypto::SigningKeyPair> root, targets, snapshot, timestamp;

  explicit Keyring(std::uint64_t seed) {
    auto rng = labeled(seed, "repository-keys");
    for (int i = 0; i < 2; ++i) root.push_back(crypto::generate_signing_key(rng));
    for (int i = 0; i < 2; ++i) targets.push_back(crypto::generate_signing_key(rng));
    snapshot.push_back(crypto::generate_signing_key(rng));
    timestamp.push_back(crypto::generate_signing_key(rng));
  }

  static metadata::RoleKeys role(const std::vector<crypto::SigningKeyPair>& keys,
                                 std::uint32_t threshold) {
    metadata::RoleKeys rk;
    for (const auto& k : keys) rk.keys.push_back(k.public_key());
    rk.threshold = threshold;
    return rk;
  }

  /// Thresholds (2, 2, 1, 1).
  metadata::RootBody root_body() const {
    return {role(root, 2), role(targets, 2), role(snapshot, 1), role(timestamp, 1)};
  }
};

Bytes artifact_for(std::uint64_t seed, const std::string& label, std::size_t size) {
  Bytes a(size);
  auto rng = labeled(seed, "artifact/" + label);
  rng.fill(a);
  return a;
}

class Runner {
 public:
  Runner(std::uint64_t seed, RunMode mode, Transcript& t)
      : seed_(seed),
        mode_(mode),
        t_(t),
        keys_(seed),
        oem_([&] {
          auto rng = labeled(seed, "oem");
          return crypto::generate_signing_key(rng);
        }()),
        rogue_([&] {
          auto rng = labeled(seed, "rogue");
          return crypto::generate_signing_key(rng);
        }()) {}

  ~Runner() {
    // Children first: they hold pipes the links point at.
    for (auto& [id, d] : devices_) {
      if (d.child) d.child->stop();
    }
    if (repo_child_) repo_child_->stop();
  }

  std::string run(std::size_t index, const Step& step);

 private:
  struct DeviceSlot {
    std::unique_ptr<transport::DeviceEndpoint> local;
    std::unique_ptr<transport::LocalLink> local_link;
    std::unique_ptr<transport::ChildProcess> child;
    std::unique_ptr<RecordingLink> recorder;
    std::unique_ptr<transport::InterceptLink> mitm;
  };

  [[noreturn]] void script_error(const std::string& what) const {
    throw ScriptError(index_, step_->line, what);
  }
  const std::string& arg(const std::string& key) const {
    auto it = step_->args.find(key);
    if (it == step_->args.end()) script_error(step_->verb + " needs " + key + "=");
    return it->second;
  }
  std::optional<std::string> opt(const std::string& key) const {
    auto it = step_->args.find(key);
    if (it == step_->args.end()) return std::nullopt;
    return it->second;
  }
  std::uint64_t number(const std::string& text) const {
    try {
      std::size_t used = 0;
      auto v = std::stoull(text, &used, 0);
      if (used != text.size()) throw std::invalid_argument(text);
      return v;
    } catch (const std::exception&) {
      script_error("not a number: '" + text + "'");
    }
  }
  std::uint64_t num_arg(const std::string& key) const { return number(arg(key)); }
  std::uint64_t num_opt(const std::string& key, std::uint64_t fallback) const {
    auto v = opt(key);
    return v ? number(*v) : fallback;
  }
  std::uint64_t any_or_number(const std::string& key) const {
    auto v = opt(key);
    if (!v || *v == "any") return 0;
    return number(*v);
  }

  DeviceSlot& slot() {
    auto id = num_arg("device");
    auto it = devices_.find(id);
    if (it == devices_.end()) script_error("device " + std::to_string(id) + " was never enrolled");
    return it->second;
  }
  const auth::UpdateEnvelope& issued(const std::string& name) const {
    auto it = issued_.find(name);
    if (it == issued_.end()) script_error("envelope '" + name + "' was never issued");
    return it->second;
  }

  void ensure_repository();
  std::unique_ptr<transport::ChildProcess> spawn(std::function<std::unique_ptr<transport::Endpoint>()> make);
  std::optional<Bytes> device_request(DeviceSlot& d, ByteView request) {
    return d.recorder->exchange(request);
  }
  void note(const std::string& line) { t_.lines.push_back("  " + line); }

  std::string enroll();
  std::string issue();
  std::string sync();
  std::string deliver();
  std::string attest();
  std::string replay();
  std::string plaintext();
  std::string tuf_update();
  std::string corrupt_flash();
  std::string boot();
  std::string policy();

  std::uint64_t seed_;
  RunMode mode_;
  Transcript& t_;
  Keyring keys_;
  crypto::SigningKeyPair oem_;
  crypto::SigningKeyPair rogue_;
  device::InstallMode install_mode_ = device::InstallMode::DualBank;
  Encoding encoding_ = Encoding::Json;
  std::uint64_t now_ = 0;

  std::unique_ptr<transport::RepositoryEndpoint> repo_local_;
  std::unique_ptr<transport::LocalLink> repo_local_link_;
  std::unique_ptr<transport::ChildProcess> repo_child_;
  std::unique_ptr<RecordingLink> repo_recorder_;
  std::unique_ptr<transport::RemoteRepository> repo_;
  std::optional<metadata::RoleMetadata> root_;
  std::optional<Controller> ctrl_;

  std::map<std::uint64_t, DeviceSlot> devices_;
  std::map<std::string, auth::UpdateEnvelope> issued_;

  std::size_t index_ = 0;
  const Step* step_ = nullptr;
};

std::unique_ptr<transport::ChildProcess> Runner::spawn(
    std::function<std::unique_ptr<transport::Endpoint>()> make) {
  std::fflush(nullptr);
  return transport::ChildProcess::fork_serving(make);
}

void Runner::ensure_repository() {
  if (repo_) return;
  auto state = repo::init_repository(keys_.root, keys_.root_body(),
                                     {keys_.targets, keys_.snapshot, keys_.timestamp}, encoding_,
                                     now_);
  root_ = state.current.root;
  protocol::DeviceLink* inner = nullptr;
  if (mode_ == RunMode::MultiProcess) {
    repo_child_ = spawn([state] { return std::make_unique<transport::RepositoryEndpoint>(state); });
    inner = repo_child_.get();
  } else {
    repo_local_ = std::make_unique<transport::RepositoryEndpoint>(state);
    repo_local_link_ = std::make_unique<transport::LocalLink>(*repo_local_);
    inner = repo_local_link_.get();
  }
  repo_recorder_ = std::make_unique<RecordingLink>("repo", true, *inner, t_.lines);
  repo_ = std::make_unique<transport::RemoteRepository>(*repo_recorder_);
  ctrl_.emplace(*root_, controller::LocalPolicy{}, labeled(seed_, "controller").next_u64());
}

std::string Runner::enroll() {
  ensure_repository();
  auto id = num_arg("device");
  auto model = num_arg("model");
  if (devices_.contains(id)) script_error("device " + std::to_string(id) + " already enrolled");
  auto mode = install_mode_;
  if (auto m = opt("mode")) {
    if (*m == "dual") mode = device::InstallMode::DualBank;
    else if (*m == "single") mode = device::InstallMode::SingleBank;
    else script_error("mode must be dual or single");
  }
  auto version = num_opt("version", 1);
  auto label = "device/" + std::to_string(id);
  auto krng = labeled(seed_, label + "/k_att");

  device::Provisioning p;
  p.identity = {model, id};
  p.oem_public = oem_.public_key();
  p.k_att = crypto::generate_mac_key(krng);
  p.mode = mode;
  p.tuf_anchor = root_;
  p.rng_seed = labeled(seed_, label + "/rng").next_u64();
  auto artifact = artifact_for(seed_, label + "/factory", num_opt("size", 256));
  auto token = auth::issue_token(oem_, artifact, {model, id, 0, version});
  auto factory = auth::serialize_envelope(auth::build_envelope(token, artifact));

  DeviceSlot d;
  protocol::DeviceLink* inner = nullptr;
  if (mode_ == RunMode::MultiProcess) {
    d.child = spawn([] { return std::make_unique<transport::DeviceEndpoint>(); });
    inner = d.child.get();
  } else {
    d.local = std::make_unique<transport::DeviceEndpoint>();
    d.local_link = std::make_unique<transport::LocalLink>(*d.local);
    inner = d.local_link.get();
  }
  d.recorder = std::make_unique<RecordingLink>("dev" + std::to_string(id), false, *inner, t_.lines);
  d.mitm = std::make_unique<transport::InterceptLink>(*d.recorder);

  Bytes req{static_cast<std::uint8_t>(Request::Provision)};
  auto body = transport::encode_provision(p, factory);
  req.insert(req.end(), body.begin(), body.end());
  auto reply = d.recorder->exchange(req);
  if (!reply || !protocol::parse_reply(*reply).ok) return "ProvisionFailed";
  ctrl_->enroll({id, model, p.k_att, version, crypto::hash(artifact)});
  devices_.emplace(id, std::move(d));
  return "Enrolled:" + std::to_string(version);
}

std::string Runner::issue() {
  const auto& name = arg("name");
  auth::Constraints c;
  c.new_version = num_arg("version");
  c.device_model = any_or_number("model");
  c.device_id = any_or_number("device");
  c.required_prev_version = num_opt("prev", 0);
  auto size = num_opt("size", 256);
  auto signer = opt("signer").value_or("oem");
  if (signer != "oem" && signer != "rogue") script_error("signer must be oem or rogue");
  auto artifact = artifact_for(seed_, name + "/" + std::to_string(c.new_version), size);
  try {
    auto token = auth::issue_token(signer == "oem" ? oem_ : rogue_, artifact, c);
    issued_.insert_or_assign(name, auth::build_envelope(token, artifact));
    note("token " + short_hash(auth::encode_token(token)) + " " +
         std::to_string(auth::encode_token(token).size()) + "B");
  } catch (const std::invalid_argument& e) {
    script_error(e.what());
  }
  return "Issued";
}

std::string Runner::sync() {
  ensure_repository();
  crypto::VerificationScope scope;
  std::string observed;
  try {
    auto fresh = ctrl_->sync(*repo_, now_);
    for (const auto& v : fresh) {
      note("verified " + v.name() + " v" +
           std::to_string(v.envelope().token.constraints.new_version));
    }
    observed = "Synced:" + std::to_string(fresh.size());
  } catch (const metadata::ChainFailure& e) {
    observed = metadata::to_string(e.code());
  } catch (const controller::ControllerFailure& e) {
    observed = controller::to_string(e.code());
  } catch (const metadata::ParseError&) {
    observed = "ParseError";
  } catch (const repo::RepoFailure& e) {
    observed = repo::to_string(e.code());
  }
  const auto& ls = ctrl_->last_seen();
  note("controller_pk=" + std::to_string(scope.delta()) + " last_seen=" + std::to_string(ls.root) +
       "/" + std::to_string(ls.targets) + "/" + std::to_string(ls.snapshot) + "/" +
       std::to_string(ls.timestamp));
  return observed;
}

std::string Runner::deliver() {
  auto& d = slot();
  auto id = num_arg("device");
  const auto& name = arg("name");
  issued(name);
  const controller::VerifiedEnvelope* env = nullptr;
  try {
    env = &ctrl_->pending(name);
  } catch (const controller::ControllerFailure& e) {
    return controller::to_string(e.code());
  }
  auto gate = ctrl_->policy_gate(*env, now_);
  if (!gate.approved) return "Deferred:" + controller::to_string(gate.reason);
  try {
    auto session = ctrl_->open_channel(id, *d.mitm);
    auto r = ctrl_->deliver(session, *d.mitm, *env, num_opt("frame", controller::kDefaultFramePayload));
    if (!r.delivered) return r.failure;
    note("device_pk=" + std::to_string(r.outcome.pk_verifications));
    return protocol::to_string(r.outcome);
  } catch (const controller::ControllerFailure& e) {
    return controller::to_string(e.code());
  }
}

std::string Runner::attest() {
  auto& d = slot();
  auto id = num_arg("device");
  if (auto forge = opt("forge")) {
    if (*forge == "tag") {
      d.mitm->arm_reply_tamper((protocol::kReportSize - 1) * 8);
    } else if (*forge == "replay") {
      d.mitm->arm_reply_replay();
    } else {
      script_error("forge must be tag or replay");
    }
  }
  controller::AttestationResult r;
  if (auto name = opt("expect-name")) {
    r = ctrl_->request_attestation(id, *d.mitm, crypto::hash(issued(*name).artifact));
  } else {
    r = ctrl_->request_attestation(id, *d.mitm);
  }
  if (r.report) note("measurement " + to_hex(r.report->measurement.bytes).substr(0, 16));
  return r.verified ? "Verified" : "Failed:" + controller::to_string(r.failure);
}

std::string Runner::replay() {
  auto& d = slot();
  auto reply = d.mitm->replay(Request::Update);
  if (!reply) script_error("no update was sent to replay");
  auto r = protocol::parse_reply(*reply);
  if (r.ok) return "Accepted";
  if (r.error.domain == protocol::ErrorDomain::Channel) return "ChannelRejected:" + r.error.message;
  return "Rejected:" + r.error.message;
}

std::string Runner::plaintext() {
  auto& d = slot();
  Bytes req{static_cast<std::uint8_t>(Request::PlainUpdate)};
  auto body = auth::serialize_envelope(issued(arg("name")));
  req.insert(req.end(), body.begin(), body.end());
  auto reply = device_request(d, req);
  if (!reply) return "NoReply";
  auto r = protocol::parse_reply(*reply);
  if (!r.ok) return "Error:" + r.error.message;
  return protocol::to_string(protocol::decode_install_outcome(r.payload));
}

std::string Runner::tuf_update() {
  auto& d = slot();
  ensure_repository();
  std::array<Bytes, 4> blobs;
  Bytes envelope;
  try {
    for (auto role : metadata::kAllRoles) {
      blobs[static_cast<std::size_t>(role) - 1] = repo_->fetch_metadata(role);
    }
    envelope = repo_->fetch_envelope(arg("name"));
  } catch (const repo::RepoFailure& e) {
    return repo::to_string(e.code());
  }
  Bytes req{static_cast<std::uint8_t>(Request::TufUpdate)};
  auto body = transport::encode_tuf_update(now_, encoding_, blobs, envelope);
  req.insert(req.end(), body.begin(), body.end());
  auto reply = device_request(d, req);
  if (!reply) return "NoReply";
  auto r = protocol::parse_reply(*reply);
  if (!r.ok) return "Error:" + r.error.message;
  auto outcome = protocol::decode_install_outcome(r.payload);
  note("device_pk=" + std::to_string(outcome.pk_verifications));
  return protocol::to_string(outcome);
}

std::string Runner::corrupt_flash() {
  auto& d = slot();
  transport::FlashFault f;
  auto kind = opt("kind").value_or("flip");
  if (kind == "flip") {
    f.kind = transport::FaultKind::FlipBankBit;
    auto bank = opt("bank").value_or("active");
    if (bank != "active" && bank != "inactive") script_error("bank must be active or inactive");
    f.bank = bank == "active" ? 0 : 1;
    f.arg = num_opt("bit", 0);
  } else if (kind == "next-write") {
    f.kind = transport::FaultKind::CorruptNextWrite;
  } else if (kind == "power-loss") {
    f.kind = transport::FaultKind::PowerLossAfter;
    f.arg = num_arg("step");
  } else {
    script_error("kind must be flip, next-write or power-loss");
  }
  Bytes req{static_cast<std::uint8_t>(Request::CorruptFlash)};
  auto body = transport::encode_fault(f);
  req.insert(req.end(), body.begin(), body.end());
  auto reply = device_request(d, req);
  return reply && protocol::parse_reply(*reply).ok ? "Corrupted" : "Refused";
}

std::string Runner::boot() {
  auto& d = slot();
  auto reply = device_request(d, Bytes{static_cast<std::uint8_t>(Request::Boot)});
  if (!reply) return "NoReply";
  auto r = protocol::parse_reply(*reply);
  if (!r.ok) return "Error:" + r.error.message;
  return protocol::to_string(protocol::decode_boot_result(r.payload));
}

std::string Runner::policy() {
  ensure_repository();
  controller::LocalPolicy p;
  auto window = opt("window").value_or("always");
  if (window != "always") {
    auto colon = window.find(':');
    if (colon == std::string::npos) script_error("window must be start:end or always");
    p.window = controller::MaintenanceWindow{number(window.substr(0, colon)),
                                             number(window.substr(colon + 1))};
    if (p.window->start > p.window->end) script_error("window start after end");
  }
  auto models = opt("models").value_or("all");
  if (models != "all") {
    std::stringstream ss(models);
    std::string m;
    while (std::getline(ss, m, ',')) p.allowed_models.insert(number(m));
  }
  ctrl_->set_policy(p);
  return "Policy";
}

std::string Runner::run(std::size_t index, const Step& step) {
  index_ = index;
  step_ = &step;
  const auto& v = step.verb;
  if (v == "seed") return "Seed";
  if (v == "mode") {
    if (step.words.size() != 1 || (step.words[0] != "dual" && step.words[0] != "single")) {
      script_error("mode takes dual or single");
    }
    install_mode_ = step.words[0] == "dual" ? device::InstallMode::DualBank
                                            : device::InstallMode::SingleBank;
    return "Mode:" + step.words[0];
  }
  if (v == "encoding") {
    if (repo_) script_error("encoding must come before the repository is used");
    if (step.words.size() != 1 || (step.words[0] != "json" && step.words[0] != "binary")) {
      script_error("encoding takes json or binary");
    }
    encoding_ = step.words[0] == "json" ? Encoding::Json : Encoding::FixedBinary;
    return "Encoding:" + step.words[0];
  }
  if (v == "enroll") return enroll();
  if (v == "issue") return issue();
  if (v == "publish") {
    ensure_repository();
    try {
      repo_->publish(arg("name"), auth::serialize_envelope(issued(arg("name"))));
      return "Published";
    } catch (const repo::RepoFailure& e) {
      return repo::to_string(e.code());
    }
  }
  if (v == "tamper") {
    ensure_repository();
    repo::TamperPolicy policy;
    try {
      policy = repo::parse_tamper_policy(arg("policy"));
    } catch (const std::invalid_argument& e) {
      script_error(e.what());
    }
    repo_->set_tamper_policy(policy);
    return "Tamper:" + repo::to_string(policy);
  }
  if (v == "sync") return sync();
  if (v == "policy") return policy();
  if (v == "gate") {
    ensure_repository();
    issued(arg("name"));
    try {
      auto g = ctrl_->policy_gate(ctrl_->pending(arg("name")), now_);
      return g.approved ? "Approve" : "Defer:" + controller::to_string(g.reason);
    } catch (const controller::ControllerFailure& e) {
      return controller::to_string(e.code());
    }
  }
  if (v == "deliver") return deliver();
  if (v == "frame-tamper") {
    slot().mitm->arm_frame_tamper(num_opt("frame", 0), num_arg("bit"));
    return "Armed";
  }
  if (v == "drop") {
    auto what = arg("what");
    static const std::map<std::string, Request> kinds = {{"hello", Request::Hello},
                                                         {"confirm", Request::Confirm},
                                                         {"update", Request::Update},
                                                         {"attest", Request::Attest}};
    auto it = kinds.find(what);
    if (it == kinds.end()) script_error("what must be hello, confirm, update or attest");
    slot().mitm->arm_drop(it->second);
    return "Armed";
  }
  if (v == "replay") return replay();
  if (v == "attest") return attest();
  if (v == "plaintext") return plaintext();
  if (v == "tuf-update") return tuf_update();
  if (v == "corrupt-flash") return corrupt_flash();
  if (v == "boot") return boot();
  if (v == "clock-advance") {
    ensure_repository();
    auto ticks = num_arg("ticks");
    repo_->advance_clock(ticks);
    now_ += ticks;
    return "Clock:" + std::to_string(now_);
  }
  if (v == "refresh") {
    ensure_repository();
    repo_->refresh_timestamp();
    return "Refreshed";
  }
  script_error("unknown step '" + v + "'");
}

std::string describe(const Step& s) {
  std::string out = s.verb;
  for (const auto& w : s.words) out += " " + w;
  for (const auto& [k, v] : s.args) out += " " + k + "=" + v;
  return out;
}

}  // namespace

Scenario parse_scenario(std::string_view text, std::string name) {
  Scenario sc;
  sc.name = std::move(name);
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string_view::npos) line = line.substr(0, hash);
    auto words = split_words(line);
    if (words.empty()) continue;
    Step step;
    step.line = line_no;
    step.verb = words[0];
    for (std::size_t i = 1; i < words.size(); ++i) {
      auto eq = words[i].find('=');
      if (eq == std::string::npos) {
        step.words.push_back(words[i]);
        continue;
      }
      auto key = words[i].substr(0, eq);
      auto value = words[i].substr(eq + 1);
      if (key.empty() || value.empty()) {
        throw ScriptError(sc.steps.size() + 1, line_no, "malformed argument '" + words[i] + "'");
      }
      if (key == "expect") {
        step.expect = value;
      } else if (!step.args.emplace(key, value).second) {
        throw ScriptError(sc.steps.size() + 1, line_no, "duplicate argument '" + key + "'");
      }
    }
    sc.steps.push_back(std::move(step));
    if (end == text.size()) break;
  }
  return sc;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  auto stem = std::filesystem::path(path).stem().string();
  return parse_scenario(ss.str(), stem);
}

bool Transcript::passed() const {
  return std::all_of(steps.begin(), steps.end(), [](const auto& s) { return s.passed; });
}

std::string Transcript::text() const {
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

Transcript run_scenario(const Scenario& scenario, std::optional<std::uint64_t> seed, RunMode mode) {
  std::uint64_t s = 0;
  if (seed) {
    s = *seed;
  } else if (!scenario.steps.empty() && scenario.steps[0].verb == "seed") {
    const auto& first = scenario.steps[0];
    if (first.words.size() != 1) throw ScriptError(1, first.line, "seed takes one number");
    try {
      s = std::stoull(first.words[0], nullptr, 0);
    } catch (const std::exception&) {
      throw ScriptError(1, first.line, "seed takes one number");
    }
  }
  for (std::size_t i = 1; i < scenario.steps.size(); ++i) {
    if (scenario.steps[i].verb == "seed") {
      throw ScriptError(i + 1, scenario.steps[i].line, "seed must be the first step");
    }
  }

  Transcript t;
  t.lines.push_back("scenario " + scenario.name + " seed=" + std::to_string(s));
  {
    Runner runner(s, mode, t);
    for (std::size_t i = 0; i < scenario.steps.size(); ++i) {
      const auto& step = scenario.steps[i];
      char idx[16];
      std::snprintf(idx, sizeof idx, "[%02zu] ", i + 1);
      t.lines.push_back(idx + describe(step));
      StepResult r;
      r.index = i + 1;
      r.verb = step.verb;
      r.expected = step.expect;
      try {
        r.observed = runner.run(i + 1, step);
      } catch (const ScriptError&) {
        throw;
      } catch (const std::exception& e) {
        r.observed = std::string("Error:") + e.what();
        for (auto& ch : r.observed) {
          if (ch == ' ') ch = '_';
        }
      }
      r.passed = !step.expect || *step.expect == r.observed;
      if (!step.expect && r.observed.starts_with("Error:")) r.passed = false;
      std::string line = "  => " + r.observed;
      if (step.expect) line += " (expect " + *step.expect + ")";
      line += r.passed ? " PASS" : " FAIL";
      t.lines.push_back(line);
      t.steps.push_back(std::move(r));
    }
  }
  auto passed = std::count_if(t.steps.begin(), t.steps.end(), [](const auto& r) { return r.passed; });
  t.lines.push_back(std::string("result ") + (t.passed() ? "PASS " : "FAIL ") +
                    std::to_string(passed) + "/" + std::to_string(t.steps.size()));
  return t;
}

// ---- benchmark ------------------------------------------------------------

std::string to_string(BenchMode m) { return m == BenchMode::Assured ? "assured" : "tuf"; }

BenchReport run_bench(BenchMode mode, std::uint64_t seed) {
  BenchReport report;
  report.mode = mode;
  Keyring keys(seed);
  auto orng = labeled(seed, "oem");
  auto oem = crypto::generate_signing_key(orng);
  auto krng = labeled(seed, "bench/k_att");
  auto k_att = crypto::generate_mac_key(krng);
  constexpr std::uint64_t kModel = 1;
  constexpr std::uint64_t kId = 1;

  auto state = repo::init_repository(keys.root, keys.root_body(),
                                     {keys.targets, keys.snapshot, keys.timestamp}, Encoding::Json);
  auto factory_art = artifact_for(seed, "bench/factory", 256);
  auto factory = auth::build_envelope(auth::issue_token(oem, factory_art, {kModel, kId, 0, 1}),
                                      factory_art);
  auto art = artifact_for(seed, "bench/update", 256);
  auto env = auth::build_envelope(auth::issue_token(oem, art, {kModel, kId, 0, 2}), art);
  auto env_bytes = auth::serialize_envelope(env);
  state = repo::publish(std::move(state), "firmware.bin", env_bytes);

  for (auto role : metadata::kAllRoles) {
    const auto& meta = state.current.get(role);
    RoleSizes rs{role, metadata::serialize(meta, Encoding::Json).size(),
                 metadata::serialize(meta, Encoding::FixedBinary).size()};
    report.json_set_bytes += rs.json;
    report.binary_set_bytes += rs.binary;
    report.roles.push_back(rs);
  }
  report.explicit_bytes = auth::encode_token(env.token).size();
  report.envelope_header_bytes = env_bytes.size() - env.artifact.size();

  device::Provisioning p;
  p.identity = {kModel, kId};
  p.oem_public = oem.public_key();
  p.k_att = k_att;
  p.tuf_anchor = state.current.root;
  p.rng_seed = seed;
  transport::DeviceEndpoint endpoint(device::Device::manufacture(p, factory));
  transport::LocalLink link(endpoint);

  // One-frame delivery: the frame overhead is measured on a real frame.
  crypto::SessionKeys probe{};
  report.frame_overhead_bytes = crypto::seal(probe, 0, env_bytes).bytes.size() - env_bytes.size();
  report.implicit_bytes = report.frame_overhead_bytes + kModeledHandshakeShare;

  using Clock = std::chrono::steady_clock;
  if (mode == BenchMode::Assured) {
    Controller ctrl(state.current.root, {}, seed);
    ctrl.enroll({kId, kModel, k_att, 1, crypto::hash(factory_art)});
    repo::StateMirror mirror(state);
    crypto::VerificationScope scope;
    ctrl.sync(mirror, 0);
    report.controller_pk_verifications = scope.delta();
    auto session = ctrl.open_channel(kId, link);
    auto t0 = Clock::now();
    auto r = ctrl.deliver(session, link, ctrl.pending("firmware.bin"));
    report.device_install_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    if (!r.delivered || r.outcome.kind != protocol::InstallOutcome::Kind::Installed) {
      throw std::runtime_error("bench install failed: " + r.failure);
    }
    report.device_pk_verifications = r.outcome.pk_verifications;
    report.device_metadata_bytes = report.explicit_bytes + report.implicit_bytes;
  } else {
    std::array<Bytes, 4> blobs;
    for (auto role : metadata::kAllRoles) {
      blobs[static_cast<std::size_t>(role) - 1] = repo::fetch_metadata(state, role);
    }
    Bytes req{static_cast<std::uint8_t>(Request::TufUpdate)};
    auto body = transport::encode_tuf_update(0, Encoding::Json, blobs, env_bytes);
    req.insert(req.end(), body.begin(), body.end());
    auto t0 = Clock::now();
    auto reply = link.exchange(req);
    report.device_install_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    auto outcome = protocol::decode_install_outcome(protocol::parse_reply(*reply).payload);
    if (outcome.kind != protocol::InstallOutcome::Kind::Installed) {
      throw std::runtime_error("bench install failed: " + protocol::to_string(outcome));
    }
    report.device_pk_verifications = outcome.pk_verifications;
    report.device_metadata_bytes = report.json_set_bytes;
  }
  return report;
}

std::string format_table(const std::vector<BenchReport>& reports) {
  std::ostringstream out;
  char buf[160];
  auto row = [&](const std::string& label, auto value_of) {
    std::snprintf(buf, sizeof buf, "%-44s", label.c_str());
    out << buf;
    for (const auto& r : reports) {
      std::snprintf(buf, sizeof buf, "%14s", value_of(r).c_str());
      out << buf;
    }
    out << "\n";
  };
  auto n = [](auto v) { return std::to_string(v); };
  row("", [](const BenchReport& r) { return to_string(r.mode); });
  row("device public-key verifications", [&](const BenchReport& r) { return n(r.device_pk_verifications); });
  row("controller public-key verifications", [&](const BenchReport& r) {
    return r.mode == BenchMode::Assured ? n(r.controller_pk_verifications) : std::string("-");
  });
  row("explicit authorization (token) bytes", [&](const BenchReport& r) { return n(r.explicit_bytes); });
  row("frame overhead bytes (measured)", [&](const BenchReport& r) { return n(r.frame_overhead_bytes); });
  row("implicit authorization bytes (modeled)", [&](const BenchReport& r) { return n(r.implicit_bytes); });
  row("device-visible metadata bytes", [&](const BenchReport& r) { return n(r.device_metadata_bytes); });
  row("metadata set bytes, json", [&](const BenchReport& r) { return n(r.json_set_bytes); });
  row("metadata set bytes, binary", [&](const BenchReport& r) { return n(r.binary_set_bytes); });
  row("envelope header bytes", [&](const BenchReport& r) { return n(r.envelope_header_bytes); });
  if (!reports.empty()) {
    for (std::size_t i = 0; i < reports.front().roles.size(); ++i) {
      auto role = metadata::to_string(reports.front().roles[i].role);
      row(role + " bytes, json / binary", [&](const BenchReport& r) {
        return n(r.roles[i].json) + " / " + n(r.roles[i].binary);
      });
    }
  }
  row("device install wall time ms (informational)", [&](const BenchReport& r) {
    std::snprintf(buf, sizeof buf, "%.3f", r.device_install_ms);
    return std::string(buf);
  });
  out << "implicit = measured frame overhead + " << kModeledHandshakeShare
      << " modeled bytes of amortized handshake\n";
  return out.str();
}

std::string format_records(const std::vector<BenchReport>& reports) {
  std::string out;
  for (const auto& r : reports) {
    nlohmann::json j = {{"record", "bench"},
                        {"mode", to_string(r.mode)},
                        {"device_pk_verifications", r.device_pk_verifications},
                        {"controller_pk_verifications", r.controller_pk_verifications},
                        {"explicit_bytes", r.explicit_bytes},
                        {"frame_overhead_bytes", r.frame_overhead_bytes},
                        {"implicit_bytes", r.implicit_bytes},
                        {"implicit_accounting", "modeled"},
                        {"device_metadata_bytes", r.device_metadata_bytes},
                        {"json_set_bytes", r.json_set_bytes},
                        {"binary_set_bytes", r.binary_set_bytes},
                        {"envelope_header_bytes", r.envelope_header_bytes}};
    out += j.dump() + "\n";
    for (const auto& rs : r.roles) {
      nlohmann::json role = {{"record", "role_size"},
                             {"mode", to_string(r.mode)},
                             {"role", metadata::to_string(rs.role)},
                             {"json", rs.json},
                             {"binary", rs.binary}};
      out += role.dump() + "\n";
    }
  }
  return out;
}

// ---- adversary matrix -----------------------------------------------------

namespace {

struct Attack {
  const char* name;
  const char* layer;
  const char* script;
};

constexpr const char* kPrelude =
    "enroll device=7 model=100\n"
    "issue name=fw-2 version=2 model=100 device=7\n"
    "publish name=fw-2 expect=Published\n";

const Attack kAttacks[] = {
    {"mirror bit-flip", "controller: envelope vs signed targets record",
     "tamper policy=flip:1500\n"
     "sync expect=EnvelopeMismatch\n"},
    {"stale-metadata replay", "controller: metadata rollback check",
     "sync expect=Synced:1\n"
     "tamper policy=stale\n"
     "sync expect=VersionRollback\n"},
    {"artifact substitution", "controller: envelope vs signed targets record",
     "tamper policy=substitute\n"
     "sync expect=EnvelopeMismatch\n"},
    {"envelope drop", "controller: missing envelope, missing ack, attestation",
     "tamper policy=drop\n"
     "sync expect=EnvelopeMissing\n"
     "tamper policy=none\n"
     "sync expect=Synced:1\n"
     "drop device=7 what=update\n"
     "deliver device=7 name=fw-2 expect=DeliveryFailed:NoAcknowledgment\n"
     "attest device=7 expect-name=fw-2 expect=Failed:WrongMeasurement\n"},
    {"channel frame tamper", "device: channel authentication",
     "sync expect=Synced:1\n"
     "frame-tamper device=7 bit=300\n"
     "deliver device=7 name=fw-2 expect=DeliveryFailed:AuthFailure\n"
     "boot device=7 expect=Running:1\n"},
    {"channel replay", "device: channel sequence check",
     "sync expect=Synced:1\n"
     "deliver device=7 name=fw-2 expect=Installed:2\n"
     "replay device=7 expect=ChannelRejected:ReplayOrReorder\n"},
    {"wrong-device envelope", "device: constraint evaluation",
     "issue name=fw-other version=3 model=100 device=99\n"
     "publish name=fw-other expect=Published\n"
     "sync expect=Synced:2\n"
     "deliver device=7 name=fw-other expect=Rejected:WrongDevice\n"},
    {"version rollback", "device: constraint evaluation",
     "issue name=fw-3 version=3 model=100 device=7\n"
     "publish name=fw-3 expect=Published\n"
     "sync expect=Synced:2\n"
     "deliver device=7 name=fw-3 expect=Installed:3\n"
     "deliver device=7 name=fw-2 expect=Rejected:VersionNotMonotonic\n"},
    {"forged token", "device: token signature",
     "issue name=fw-evil version=3 model=100 device=7 signer=rogue\n"
     "publish name=fw-evil expect=Published\n"
     "sync expect=Synced:2\n"
     "deliver device=7 name=fw-evil expect=Rejected:BadSignature\n"},
    {"forged attestation", "controller: attestation tag",
     "attest device=7 forge=tag expect=Failed:BadTag\n"},
    {"post-install flash corruption", "device: boot validation; controller: attestation",
     "sync expect=Synced:1\n"
     "deliver device=7 name=fw-2 expect=Installed:2\n"
     "corrupt-flash device=7 bank=active bit=9\n"
     "boot device=7 expect=Running:1+fallback\n"
     "attest device=7 expect-name=fw-2 expect=Failed:WrongMeasurement\n"},
};

}  // namespace

std::vector<AdversaryRow> run_adversary_suite(std::uint64_t seed, RunMode mode) {
  std::vector<AdversaryRow> rows;
  for (const auto& a : kAttacks) {
    auto sc = parse_scenario(std::string(kPrelude) + a.script, a.name);
    auto t = run_scenario(sc, seed, mode);
    AdversaryRow row;
    row.attack = a.name;
    row.expected_layer = a.layer;
    row.detected = t.passed();
    for (const auto& s : t.steps) {
      if (s.expected && s.verb != "publish") {
        if (!row.observed.empty()) row.observed += ", ";
        row.observed += s.observed;
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_matrix(const std::vector<AdversaryRow>& rows) {
  std::ostringstream out;
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-30s %-52s %-9s %s\n", "attack", "detection layer", "detected",
                "observed");
  out << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-30s %-52s %-9s %s\n", r.attack.c_str(),
                  r.expected_layer.c_str(), r.detected ? "yes" : "NO", r.observed.c_str());
    out << buf;
  }
  auto undetected = std::count_if(rows.begin(), rows.end(), [](const auto& r) { return !r.detected; });
  out << "undetected rows: " << undetected << "\n";
  return out.str();
}

}  // namespace assured::harness
