#pragma once
// Everything except the HTTP layer, which pulls in httplib.
#include "error.hpp"
#include "kb_model.hpp"
#include "rule_lang.hpp"
#include "inference.hpp"
#include "induction.hpp"
#include "learner.hpp"
#include "kb_store.hpp"
