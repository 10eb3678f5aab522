#pragma once

#include <string>

namespace aera {

// libsodium wrappers. sodium_init() is called on first use.
std::string hash_password(const std::string& password);  // argon2id, salted
bool verify_password(const std::string& stored_hash, const std::string& password);
std::string new_token();                           // 32 random bytes, hex
std::string token_digest(const std::string& token);  // what the store keeps

}  // namespace aera
