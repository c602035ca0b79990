#pragma once

#include "resest/analysis.hpp"
#include "resest/detector.hpp"
#include "resest/errors.hpp"
#include "resest/estimator.hpp"
#include "resest/harness.hpp"
#include "resest/linalg.hpp"
#include "resest/model.hpp"
