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

#pragma once

#include "assured/controller.hpp"
#include "assured/device.hpp"
#include "assured/repository.hpp"
#include "assured/transport.hpp"
#include "metadata_support.hpp"

namespace assured::testing {

inline constexpr std::uint64_t kModel = 100;
inline constexpr std::uint64_t kDeviceId = 7;

inline Bytes artifact_bytes(std::size_t size, std::uint64_t version) {
  Bytes a(size);
  for (std::size_t i = 0; i < size; ++i) a[i] = static_cast<std::uint8_t>(i * 31 + version);
  return a;
}

inline crypto::SigningKeyPair oem_key(std::uint64_t seed) {
  auto rng = crypto::Drbg::from_seed(seed, "oem");
  return crypto::generate_signing_key(rng);
}

inline crypto::MacKey attestation_key(std::uint64_t seed) {
  auto rng = crypto::Drbg::from_seed(seed, "k_att");
  return crypto::generate_mac_key(rng);
}

/// OEM, repository, one device behind an endpoint, and one controller.
struct World {
  RoleKeyring keys;
  crypto::SigningKeyPair oem;
  crypto::MacKey k_att;
  repo::RepositoryState repo;
  auth::UpdateEnvelope factory;
  transport::DeviceEndpoint endpoint;
  transport::LocalLink link{endpoint};
  controller::Controller ctrl;

  explicit World(device::InstallMode mode = device::InstallMode::DualBank,
                 metadata::Encoding enc = metadata::Encoding::Json, std::uint64_t seed = 1)
      : keys(seed),
        oem(oem_key(seed)),
        k_att(attestation_key(seed)),
        repo(repo::init_repository(keys.root, keys.root_body(),
                                   {keys.targets, keys.snapshot, keys.timestamp}, enc)),
        factory(envelope(1)),
        endpoint(device::Device::manufacture(provisioning(mode, seed), factory)),
        ctrl(repo.current.root, {}, seed) {
    ctrl.enroll({kDeviceId, kModel, k_att, 1, crypto::hash(factory.artifact)});
  }

  device::Device& dev() { return endpoint.device(); }

  device::Provisioning provisioning(device::InstallMode mode, std::uint64_t seed) const {
    device::Provisioning p;
    p.identity = {kModel, kDeviceId};
    p.oem_public = oem.public_key();
    p.k_att = k_att;
    p.mode = mode;
    p.tuf_anchor = repo.current.root;
    p.rng_seed = seed;
    return p;
  }

  auth::UpdateEnvelope envelope(std::uint64_t version, std::size_t size = 256,
                                auth::Constraints c = {kModel, kDeviceId, 0, 0}) const {
    c.new_version = version;
    auto artifact = artifact_bytes(size, version);
    return auth::build_envelope(auth::issue_token(oem, artifact, c), artifact);
  }

  void publish(const std::string& name, const auth::UpdateEnvelope& env) {
    repo = repo::publish(std::move(repo), name, auth::serialize_envelope(env));
  }

  std::vector<controller::VerifiedEnvelope> sync() {
    repo::StateMirror mirror(repo);
    return ctrl.sync(mirror, repo.clock);
  }

  controller::DeliveryResult deliver(const std::string& name) {
    auto session = ctrl.open_channel(kDeviceId, link);
    return ctrl.deliver(session, link, ctrl.pending(name));
  }
};

}  // namespace assured::testing
