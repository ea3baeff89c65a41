"""Test suite for TaskWarden."""
