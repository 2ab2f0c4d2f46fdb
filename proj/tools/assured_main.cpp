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

// assured: command-line front end for the OEM, repository, controller,
// device, scenario runner, benchmark and adversary suite.

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>

#include "assured/controller.hpp"
#include "assured/harness.hpp"
#include "assured/transport.hpp"

using namespace assured;
namespace fs = std::filesystem;

namespace {

Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  return Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, ByteView data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
}

void write_text(const std::string& path, const std::string& text) { write_file(path, as_bytes(text)); }

template <std::size_t N>
FixedBytes<N> hex_fixed(const std::string& hex, const char* what) {
  auto raw = from_hex(hex);
  if (raw.size() != N) throw std::runtime_error(std::string(what) + " must be " + std::to_string(N) + " bytes of hex");
  FixedBytes<N> out{};
  std::copy(raw.begin(), raw.end(), out.begin());
  return out;
}

crypto::Drbg rng_for(const std::optional<std::uint64_t>& seed, const char* label) {
  return seed ? crypto::Drbg::from_seed(*seed, label) : crypto::Drbg::from_os();
}

std::string trimmed_file(const std::string& path) {
  auto b = read_file(path);
  std::string s(b.begin(), b.end());
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  return s;
}

crypto::SigningKeyPair load_signing_key(const std::string& path) {
  return crypto::SigningKeyPair::from_seed(hex_fixed<crypto::kSeedSize>(trimmed_file(path), "key seed"));
}

metadata::Encoding parse_encoding(const std::string& s) {
  if (s == "json") return metadata::Encoding::Json;
  if (s == "binary") return metadata::Encoding::FixedBinary;
  throw std::runtime_error("encoding must be json or binary");
}

/// Reads root metadata in whichever encoding it was written.
metadata::RoleMetadata load_root(const std::string& path) {
  auto bytes = read_file(path);
  try {
    return metadata::parse(bytes, metadata::Encoding::Json);
  } catch (const metadata::ParseError&) {
    return metadata::parse(bytes, metadata::Encoding::FixedBinary);
  }
}

void print_token(const auth::AuthorizationToken& t) {
  const auto& c = t.constraints;
  std::cout << "artifact_hash     " << to_hex(t.artifact_hash.bytes) << "\n"
            << "artifact_size     " << t.artifact_size << "\n"
            << "device_model      " << c.device_model << (c.device_model ? "" : " (any)") << "\n"
            << "device_id         " << c.device_id << (c.device_id ? "" : " (any)") << "\n"
            << "required_prev     " << c.required_prev_version << (c.required_prev_version ? "" : " (none)") << "\n"
            << "new_version       " << c.new_version << "\n"
            << "signature         " << to_hex(t.signature.bytes) << "\n"
            << "encoded size      " << auth::encode_token(t).size() << " bytes\n";
}

/// A device reached either through its flash file or a listening socket.
struct DeviceAccess {
  std::optional<std::string> flash;
  std::unique_ptr<transport::DeviceEndpoint> endpoint;
  std::unique_ptr<protocol::DeviceLink> link;

  DeviceAccess(const std::string& flash_path, const std::string& socket) {
    if (!socket.empty()) {
      link = std::make_unique<transport::UnixLink>(socket);
    } else if (!flash_path.empty()) {
      flash = flash_path;
      endpoint = std::make_unique<transport::DeviceEndpoint>(device::Device::load_flash(flash_path));
      link = std::make_unique<transport::LocalLink>(*endpoint);
    } else {
      throw std::runtime_error("give --flash or --connect");
    }
  }
  void finish() {
    if (flash) endpoint->device().save_flash(*flash);
  }
};

int run_scenario_cmd(const std::string& file, std::optional<std::uint64_t> seed, bool multi,
                     const std::string& out) {
  auto sc = harness::load_scenario(file);
  auto t = harness::run_scenario(sc, seed, multi ? harness::RunMode::MultiProcess
                                                 : harness::RunMode::InProcess);
  if (!out.empty()) write_text(out, t.text());
  std::cout << t.text();
  return t.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Assured software update: OEM, repository, controller and device tools"};
  app.require_subcommand(1);
  std::optional<std::uint64_t> seed;

  // ---- oem ----
  auto* oem = app.add_subcommand("oem", "OEM signing key and authorization tokens");
  oem->require_subcommand(1);
  std::string key_out, key_path, artifact_path, env_out;
  std::uint64_t model = 0, device_id = 0, prev = 0, version = 1;
  auto* keygen = oem->add_subcommand("keygen", "Create an OEM signing key");
  keygen->add_option("--out", key_out, "Seed file to write")->required();
  keygen->add_option("--seed", seed, "Deterministic seed instead of the OS generator");
  auto* issue = oem->add_subcommand("issue", "Sign a token for an artifact and write an envelope");
  issue->add_option("--key", key_path, "OEM key seed file")->required();
  issue->add_option("--artifact", artifact_path, "Firmware image")->required();
  issue->add_option("--version", version, "New version")->required();
  issue->add_option("--model", model, "Device model (0 = any)");
  issue->add_option("--device", device_id, "Device id (0 = any)");
  issue->add_option("--prev", prev, "Required installed version (0 = none)");
  issue->add_option("--out", env_out, "Envelope file to write")->required();

  // ---- token ----
  auto* token = app.add_subcommand("token", "Inspect tokens");
  token->require_subcommand(1);
  std::string dump_path;
  auto* dump = token->add_subcommand("dump", "Print the token of an envelope or a raw 136-byte token");
  dump->add_option("file", dump_path)->required();

  // ---- repo ----
  auto* repo_cmd = app.add_subcommand("repo", "Untrusted repository (mirror)");
  repo_cmd->require_subcommand(1);
  std::string repo_dir, encoding = "json", root_keys_out, name, envelope_path, policy, listen;
  std::uint64_t ticks = 0;
  auto* rinit = repo_cmd->add_subcommand("init", "Create a repository with fresh role keys");
  rinit->add_option("--dir", repo_dir)->required();
  rinit->add_option("--encoding", encoding, "json or binary");
  rinit->add_option("--root-keys-out", root_keys_out, "Where to keep the offline root key seeds")->required();
  rinit->add_option("--seed", seed);
  auto* rpub = repo_cmd->add_subcommand("publish", "Add or replace a target envelope");
  rpub->add_option("--dir", repo_dir)->required();
  rpub->add_option("--name", name)->required();
  rpub->add_option("--envelope", envelope_path)->required();
  auto* rref = repo_cmd->add_subcommand("refresh", "Re-sign the timestamp");
  rref->add_option("--dir", repo_dir)->required();
  auto* rclock = repo_cmd->add_subcommand("clock", "Advance the repository's logical clock");
  rclock->add_option("--dir", repo_dir)->required();
  rclock->add_option("--ticks", ticks)->required();
  auto* rtamper = repo_cmd->add_subcommand("tamper", "Set the mirror's tamper policy");
  rtamper->add_option("--dir", repo_dir)->required();
  rtamper->add_option("--policy", policy, "none, flip:<bit>, stale, substitute, drop")->required();
  auto* rserve = repo_cmd->add_subcommand("serve", "Serve the repository on a unix socket");
  rserve->add_option("--dir", repo_dir)->required();
  rserve->add_option("--listen", listen, "Socket path")->required();

  // ---- controller ----
  auto* ctl = app.add_subcommand("controller", "Domain controller");
  ctl->require_subcommand(1);
  std::string state, root_path, k_att_hex, digest_hex, flash, connect, repo_socket;
  std::optional<std::uint64_t> now;
  std::size_t frame = controller::kDefaultFramePayload;
  auto* cinit = ctl->add_subcommand("init", "Create controller state from a trusted root");
  cinit->add_option("--state", state)->required();
  cinit->add_option("--root", root_path, "Trusted root metadata file")->required();
  cinit->add_option("--seed", seed);
  auto* cenroll = ctl->add_subcommand("enroll", "Register a device and its K_Att");
  cenroll->add_option("--state", state)->required();
  cenroll->add_option("--device", device_id)->required();
  cenroll->add_option("--model", model)->required();
  cenroll->add_option("--k-att", k_att_hex, "32-byte hex")->required();
  cenroll->add_option("--version", version, "Factory image version");
  cenroll->add_option("--digest", digest_hex, "Factory image SHA-256 (hex)")->required();
  auto* csync = ctl->add_subcommand("sync", "Verify repository metadata and fetch new envelopes");
  csync->add_option("--state", state)->required();
  auto* csrc = csync->add_option("--repo", repo_dir, "Repository directory");
  csync->add_option("--repo-socket", repo_socket, "Socket of `repo serve`")->excludes(csrc);
  csync->add_option("--now", now, "Logical time (default: repository clock)");
  auto* cdel = ctl->add_subcommand("deliver", "Send a verified envelope over the secure channel");
  cdel->add_option("--state", state)->required();
  cdel->add_option("--device", device_id)->required();
  cdel->add_option("--name", name)->required();
  cdel->add_option("--flash", flash, "Device flash file");
  cdel->add_option("--connect", connect, "Socket of `device run --listen`");
  cdel->add_option("--now", now, "Logical time for the policy gate");
  cdel->add_option("--frame", frame, "Plaintext bytes per frame");
  auto* catt = ctl->add_subcommand("attest", "Challenge a device for an attestation report");
  catt->add_option("--state", state)->required();
  catt->add_option("--device", device_id)->required();
  catt->add_option("--flash", flash);
  catt->add_option("--connect", connect);

  // ---- device ----
  auto* dev = app.add_subcommand("device", "Simulated device");
  dev->require_subcommand(1);
  std::string oem_public_hex, factory_path, mode = "dual", anchor_path;
  auto* dinit = dev->add_subcommand("init", "Manufacture a device into a flash file");
  dinit->add_option("--flash", flash)->required();
  dinit->add_option("--device", device_id)->required();
  dinit->add_option("--model", model)->required();
  dinit->add_option("--oem-public", oem_public_hex, "OEM public key (hex)")->required();
  dinit->add_option("--factory", factory_path, "Factory envelope")->required();
  dinit->add_option("--k-att", k_att_hex, "32-byte hex; generated when absent");
  dinit->add_option("--mode", mode, "dual or single");
  dinit->add_option("--anchor", anchor_path, "Root metadata for TUF comparison mode");
  dinit->add_option("--seed", seed);
  auto* drun = dev->add_subcommand("run", "Serve the device on a unix socket");
  drun->add_option("--flash", flash)->required();
  drun->add_option("--listen", listen, "Socket path")->required();
  auto* dboot = dev->add_subcommand("boot", "Boot the device and print the result");
  dboot->add_option("--flash", flash)->required();

  // ---- scenario / bench / adversary ----
  auto* scen = app.add_subcommand("scenario", "Scenario scripts");
  scen->require_subcommand(1);
  std::string scenario_file, transcript_out, records_out, bench_mode = "both";
  bool multi = false;
  auto* srun = scen->add_subcommand("run", "Run a scenario and print its transcript");
  srun->add_option("file", scenario_file)->required();
  srun->add_option("--seed", seed);
  srun->add_flag("--multi-process", multi, "Repository and devices in child processes");
  srun->add_option("--transcript", transcript_out, "Also write the transcript here");
  auto* bench = app.add_subcommand("bench", "Operation-count and metadata-size comparison");
  bench->add_option("--mode", bench_mode, "assured, tuf or both");
  bench->add_option("--records", records_out, "Write line-delimited JSON records here");
  bench->add_option("--seed", seed);
  auto* adv = app.add_subcommand("adversary-suite", "Run every attack and report where it was caught");
  adv->add_option("--seed", seed);
  adv->add_flag("--multi-process", multi);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*keygen) {
      auto rng = rng_for(seed, "oem");
      auto key = crypto::generate_signing_key(rng);
      write_text(key_out, to_hex(key.seed()) + "\n");
      std::cout << to_hex(key.public_key().bytes) << "\n";
    } else if (*issue) {
      auto key = load_signing_key(key_path);
      auto artifact = read_file(artifact_path);
      auto t = auth::issue_token(key, artifact, {model, device_id, prev, version});
      write_file(env_out, auth::serialize_envelope(auth::build_envelope(t, artifact)));
      print_token(t);
    } else if (*dump) {
      auto bytes = read_file(dump_path);
      print_token(bytes.size() == auth::kTokenSize ? auth::decode_token(bytes)
                                                   : auth::parse_envelope(bytes).token);
    } else if (*rinit) {
      auto rng = rng_for(seed, "repository-keys");
      auto gen = [&](int n) {
        std::vector<crypto::SigningKeyPair> v;
        for (int i = 0; i < n; ++i) v.push_back(crypto::generate_signing_key(rng));
        return v;
      };
      auto root = gen(2);
      repo::OnlineKeys online{gen(2), gen(1), gen(1)};
      auto publics = [](const std::vector<crypto::SigningKeyPair>& keys, std::uint32_t t) {
        metadata::RoleKeys rk;
        for (const auto& k : keys) rk.keys.push_back(k.public_key());
        rk.threshold = t;
        return rk;
      };
      metadata::RootBody body{publics(root, 2), publics(online.targets, 2),
                              publics(online.snapshot, 1), publics(online.timestamp, 1)};
      auto s = repo::init_repository(root, body, online, parse_encoding(encoding));
      repo::save_repository(s, repo_dir);
      nlohmann::json seeds = nlohmann::json::array();
      for (const auto& k : root) seeds.push_back(to_hex(k.seed()));
      write_text(root_keys_out, nlohmann::json{{"root", seeds}}.dump(2) + "\n");
      std::cout << "trusted root: " << (fs::path(repo_dir) / "root.1.meta").string() << "\n";
    } else if (*rpub) {
      auto s = repo::publish(repo::load_repository(repo_dir), name, read_file(envelope_path));
      repo::save_repository(s, repo_dir);
      std::cout << "targets v" << s.current.targets.version << ", snapshot v"
                << s.current.snapshot.version << ", timestamp v" << s.current.timestamp.version << "\n";
    } else if (*rref) {
      auto s = repo::refresh_timestamp(repo::load_repository(repo_dir));
      repo::save_repository(s, repo_dir);
      std::cout << "timestamp v" << s.current.timestamp.version << " expires " << s.current.timestamp.expires << "\n";
    } else if (*rclock) {
      auto s = repo::advance_clock(repo::load_repository(repo_dir), ticks);
      repo::save_repository(s, repo_dir);
      std::cout << "clock " << s.clock << "\n";
    } else if (*rtamper) {
      auto s = repo::set_tamper_policy(repo::load_repository(repo_dir), repo::parse_tamper_policy(policy));
      repo::save_repository(s, repo_dir);
      std::cout << "tamper " << repo::to_string(s.tamper) << "\n";
    } else if (*rserve) {
      transport::RepositoryEndpoint endpoint(repo::load_repository(repo_dir));
      transport::serve_unix(endpoint, listen);
      repo::save_repository(endpoint.state(), repo_dir);
    } else if (*cinit) {
      controller::Controller c(load_root(root_path), {}, seed ? *seed : crypto::Drbg::from_os().next_u64());
      c.save(state);
    } else if (*cenroll) {
      auto c = controller::Controller::load(state);
      controller::DeviceRecord r;
      r.device_id = device_id;
      r.device_model = model;
      r.k_att.bytes = hex_fixed<crypto::kMacKeySize>(k_att_hex, "K_Att");
      r.expected_version = version;
      r.expected_digest.bytes = hex_fixed<crypto::kDigestSize>(digest_hex, "digest");
      c.enroll(r);
      c.save(state);
    } else if (*csync) {
      auto c = controller::Controller::load(state);
      std::vector<controller::VerifiedEnvelope> fresh;
      if (!repo_socket.empty()) {
        transport::UnixLink link(repo_socket);
        transport::RemoteRepository remote(link);
        fresh = c.sync(remote, now.value_or(0));
      } else if (!repo_dir.empty()) {
        auto s = repo::load_repository(repo_dir);
        repo::StateMirror mirror(s);
        fresh = c.sync(mirror, now.value_or(s.clock));
      } else {
        throw std::runtime_error("give --repo or --repo-socket");
      }
      c.save(state);
      for (const auto& v : fresh) {
        std::cout << "verified " << v.name() << " v" << v.envelope().token.constraints.new_version << "\n";
      }
      std::cout << fresh.size() << " new envelope(s)\n";
    } else if (*cdel) {
      auto c = controller::Controller::load(state);
      const auto& env = c.pending(name);
      auto gate = c.policy_gate(env, now.value_or(0));
      if (!gate.approved) {
        std::cout << "Deferred:" << controller::to_string(gate.reason) << "\n";
        return 2;
      }
      DeviceAccess d(flash, connect);
      auto session = c.open_channel(device_id, *d.link);
      auto r = c.deliver(session, *d.link, env, frame);
      d.finish();
      c.save(state);
      std::cout << (r.delivered ? protocol::to_string(r.outcome) : r.failure) << "\n";
      return r.delivered && r.outcome.kind == protocol::InstallOutcome::Kind::Installed ? 0 : 1;
    } else if (*catt) {
      auto c = controller::Controller::load(state);
      DeviceAccess d(flash, connect);
      auto r = c.request_attestation(device_id, *d.link);
      d.finish();
      c.save(state);
      std::cout << (r.verified ? "Verified" : "Failed:" + controller::to_string(r.failure)) << "\n";
      return r.verified ? 0 : 1;
    } else if (*dinit) {
      device::Provisioning p;
      p.identity = {model, device_id};
      p.oem_public.bytes = hex_fixed<crypto::kPublicKeySize>(oem_public_hex, "OEM public key");
      auto rng = rng_for(seed, "device");
      if (k_att_hex.empty()) {
        p.k_att = crypto::generate_mac_key(rng);
      } else {
        p.k_att.bytes = hex_fixed<crypto::kMacKeySize>(k_att_hex, "K_Att");
      }
      if (mode != "dual" && mode != "single") throw std::runtime_error("mode must be dual or single");
      p.mode = mode == "dual" ? device::InstallMode::DualBank : device::InstallMode::SingleBank;
      if (!anchor_path.empty()) p.tuf_anchor = load_root(anchor_path);
      p.rng_seed = rng.next_u64();
      auto factory = auth::parse_envelope(read_file(factory_path));
      auto d = device::Device::manufacture(p, factory);
      d.save_flash(flash);
      // Printed once, for the controller's enroll step; the flash keeps the
      // only other copy in its secure-store region.
      std::cout << "k_att  " << to_hex(p.k_att.bytes) << "\n"
                << "digest " << to_hex(crypto::hash(factory.artifact).bytes) << "\n"
                << "version " << d.installed_version() << "\n";
    } else if (*drun) {
      transport::DeviceEndpoint endpoint(device::Device::load_flash(flash));
      transport::serve_unix(endpoint, listen);
      endpoint.device().save_flash(flash);
    } else if (*dboot) {
      auto d = device::Device::load_flash(flash);
      auto b = d.boot();
      d.save_flash(flash);
      std::cout << protocol::to_string(b) << "\n";
      return b.running ? 0 : 1;
    } else if (*srun) {
      return run_scenario_cmd(scenario_file, seed, multi, transcript_out);
    } else if (*bench) {
      std::vector<harness::BenchReport> reports;
      if (bench_mode == "assured" || bench_mode == "both") {
        reports.push_back(harness::run_bench(harness::BenchMode::Assured, seed.value_or(0)));
      }
      if (bench_mode == "tuf" || bench_mode == "both") {
        reports.push_back(harness::run_bench(harness::BenchMode::TufOnDevice, seed.value_or(0)));
      }
      if (reports.empty()) throw std::runtime_error("mode must be assured, tuf or both");
      std::cout << harness::format_table(reports);
      if (!records_out.empty()) write_text(records_out, harness::format_records(reports));
    } else if (*adv) {
      auto rows = harness::run_adversary_suite(
          seed.value_or(0), multi ? harness::RunMode::MultiProcess : harness::RunMode::InProcess);
      std::cout << harness::format_matrix(rows);
      return std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.detected; }) ? 0 : 1;
    }
  } catch (const harness::ScriptError& e) {
    std::cerr << "script error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
