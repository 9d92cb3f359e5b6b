#pragma once

#include "dcnpd/baselines.hpp"
#include "dcnpd/data.hpp"
#include "dcnpd/dcn.hpp"
#include "dcnpd/errors.hpp"
#include "dcnpd/experiment.hpp"
#include "dcnpd/matrix.hpp"
#include "dcnpd/nn.hpp"
#include "dcnpd/propensity.hpp"
#include "dcnpd/rng.hpp"
#include "dcnpd/serialize.hpp"
#include "dcnpd/training.hpp"
