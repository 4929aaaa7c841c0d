#pragma once

#include "psprop/error.hpp"
#include "psprop/numkit.hpp"
#include "psprop/dataset.hpp"
#include "psprop/interval.hpp"
#include "psprop/glm.hpp"
#include "psprop/estimators.hpp"
#include "psprop/learners.hpp"
#include "psprop/regen.hpp"
#include "psprop/propagate.hpp"
#include "psprop/fisher.hpp"
#include "psprop/sensitivity.hpp"
#include "psprop/harness.hpp"
