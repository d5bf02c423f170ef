"""Tests for Shape Prior"""
