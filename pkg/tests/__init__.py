# Tests for RecShield
